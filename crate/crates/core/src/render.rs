//! Synthetic depth data: random scenes of rotated cuboids and spheres
//! rendered by per-pixel ray casting, plus the degradation pipeline that
//! turns a ground-truth map into a (noisy low-resolution, mid-resolution)
//! training pair.
//!
//! Conventions: the camera sits at the origin looking down +z; a pixel ray
//! has direction ((x + 0.5 - cx)/f, (y + 0.5 - cy)/f, 1), so the ray
//! parameter t equals the perpendicular distance to the image plane
//! (z-depth). Units are arbitrary; the defaults put scene depths roughly in
//! [500, 5000] so the depth-dependent noise model is meaningful.

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::grid::{self, DownsampleKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Camera {
    /// Camera with the given horizontal field of view, principal point at
    /// the image center.
    pub fn with_hfov(width: usize, height: usize, hfov_degrees: f64) -> Self {
        let focal = (width as f64 / 2.0) / (hfov_degrees.to_radians() / 2.0).tan();
        Camera {
            width,
            height,
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }

    /// Ray direction through the center of pixel (y, x); z component is 1,
    /// so the ray parameter is z-depth.
    pub fn ray(&self, y: usize, x: usize) -> [f64; 3] {
        [
            (x as f64 + 0.5 - self.cx) / self.focal,
            (y as f64 + 0.5 - self.cy) / self.focal,
            1.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Cuboid {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// Local-to-world rotation (orthonormal, determinant +1).
    pub rotation: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scene {
    pub cuboids: Vec<Cuboid>,
    pub spheres: Vec<Sphere>,
    pub background_depth: f64,
    pub camera: Camera,
}

/// Sampling bounds for random scenes. Placement volume and size ranges are
/// not pinned by any reference; the defaults keep every primitive strictly
/// in front of the camera and surfaces within roughly [500, 5000] depth.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub hfov_degrees: f64,
    pub background_depth: f64,
    pub cuboid_count_min: usize,
    pub cuboid_count_max: usize,
    pub sphere_count_max: usize,
    /// Centers sampled in x, y ∈ [-lateral_extent, lateral_extent].
    pub lateral_extent: f64,
    /// Centers sampled in z ∈ [depth_min, depth_max].
    pub depth_min: f64,
    pub depth_max: f64,
    pub cuboid_half_extent_min: f64,
    pub cuboid_half_extent_max: f64,
    pub sphere_radius_min: f64,
    pub sphere_radius_max: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 128,
            height: 128,
            hfov_degrees: 90.0,
            background_depth: 5000.0,
            cuboid_count_min: 24,
            cuboid_count_max: 42,
            sphere_count_max: 3,
            lateral_extent: 2000.0,
            depth_min: 1200.0,
            depth_max: 4500.0,
            cuboid_half_extent_min: 80.0,
            cuboid_half_extent_max: 400.0,
            sphere_radius_min: 80.0,
            sphere_radius_max: 400.0,
        }
    }
}

/// Uniformly random rotation matrix (via a uniform unit quaternion).
fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut q = [0.0f64; 4];
    loop {
        for v in &mut q {
            *v = normal.sample(rng);
        }
        let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if n > 1e-6 {
            for v in &mut q {
                *v /= n;
            }
            break;
        }
    }
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Draw a random scene: 24–42 cuboids and up to 3 spheres, uniformly scaled
/// and rotated, centers inside the placement volume.
pub fn sample_scene(rng: &mut impl Rng, spec: &SceneSpec) -> Scene {
    fn center(rng: &mut impl Rng, spec: &SceneSpec) -> [f64; 3] {
        [
            rng.gen_range(-spec.lateral_extent..spec.lateral_extent),
            rng.gen_range(-spec.lateral_extent..spec.lateral_extent),
            rng.gen_range(spec.depth_min..spec.depth_max),
        ]
    }
    let n_cuboids = rng.gen_range(spec.cuboid_count_min..=spec.cuboid_count_max);
    let n_spheres = rng.gen_range(0..=spec.sphere_count_max);
    let mut cuboids = Vec::with_capacity(n_cuboids);
    for _ in 0..n_cuboids {
        let c = center(rng, spec);
        let he = [
            rng.gen_range(spec.cuboid_half_extent_min..spec.cuboid_half_extent_max),
            rng.gen_range(spec.cuboid_half_extent_min..spec.cuboid_half_extent_max),
            rng.gen_range(spec.cuboid_half_extent_min..spec.cuboid_half_extent_max),
        ];
        cuboids.push(Cuboid {
            center: c,
            half_extents: he,
            rotation: random_rotation(rng),
        });
    }
    let mut spheres = Vec::with_capacity(n_spheres);
    for _ in 0..n_spheres {
        spheres.push(Sphere {
            center: center(rng, spec),
            radius: rng.gen_range(spec.sphere_radius_min..spec.sphere_radius_max),
        });
    }
    Scene {
        cuboids,
        spheres,
        background_depth: spec.background_depth,
        camera: Camera::with_hfov(spec.width, spec.height, spec.hfov_degrees),
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Smallest positive ray parameter hitting the sphere, if any
/// (stable quadratic: the larger-magnitude root is computed first, the
/// other by Vieta to avoid cancellation).
pub fn intersect_sphere(dir: [f64; 3], sphere: &Sphere) -> Option<f64> {
    let a = dot(dir, dir);
    let half_b = -dot(dir, sphere.center);
    let c = dot(sphere.center, sphere.center) - sphere.radius * sphere.radius;
    let disc = half_b * half_b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -(half_b + half_b.signum() * sq);
    let (t1, t2) = (q / a, if q != 0.0 { c / q } else { 0.0 });
    let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
    if lo > 0.0 {
        Some(lo)
    } else if hi > 0.0 {
        Some(hi)
    } else {
        None
    }
}

/// Smallest positive ray parameter hitting the cuboid, via the slab method
/// in the cuboid's local frame.
pub fn intersect_cuboid(dir: [f64; 3], cuboid: &Cuboid) -> Option<f64> {
    let r = &cuboid.rotation;
    // local coordinates: p' = R^T (p - center); ray origin is the camera origin
    let mut o = [0.0f64; 3];
    let mut d = [0.0f64; 3];
    for i in 0..3 {
        o[i] = -(r[0][i] * cuboid.center[0]
            + r[1][i] * cuboid.center[1]
            + r[2][i] * cuboid.center[2]);
        d[i] = r[0][i] * dir[0] + r[1][i] * dir[1] + r[2][i] * dir[2];
    }
    let mut t_min = f64::NEG_INFINITY;
    let mut t_max = f64::INFINITY;
    for i in 0..3 {
        let he = cuboid.half_extents[i];
        if d[i].abs() < 1e-300 {
            if o[i].abs() > he {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let mut t1 = (-he - o[i]) * inv;
        let mut t2 = (he - o[i]) * inv;
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        t_min = t_min.max(t1);
        t_max = t_max.min(t2);
        if t_min > t_max {
            return None;
        }
    }
    if t_min > 0.0 {
        Some(t_min)
    } else if t_max > 0.0 {
        Some(t_max)
    } else {
        None
    }
}

/// Cast one ray for each pixel and return the z-depth of the closest
/// surface, clamped to the scene's background depth.
pub fn render_depth(scene: &Scene) -> Field2D {
    let cam = &scene.camera;
    Field2D::from_fn(cam.height, cam.width, |y, x| {
        let dir = cam.ray(y, x);
        let mut depth = scene.background_depth;
        for c in &scene.cuboids {
            if let Some(t) = intersect_cuboid(dir, c) {
                depth = depth.min(t);
            }
        }
        for s in &scene.spheres {
            if let Some(t) = intersect_sphere(dir, s) {
                depth = depth.min(t);
            }
        }
        depth
    })
}

/// How to turn a ground-truth map into the training input.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationSpec {
    pub rho: usize,
    /// Depth-dependent Gaussian noise scale; 0 disables noise. At depth d
    /// the per-pixel noise is N(0, (noise_sigma / d)^2) under the default
    /// standard-deviation reading.
    pub noise_sigma: f64,
    pub rng_seed: u64,
    /// Interpret `noise_sigma / d` as a variance instead of a standard
    /// deviation (non-default reading of the noise model).
    #[serde(default)]
    pub sigma_is_variance: bool,
    #[serde(default)]
    pub downsample: DownsampleKind,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        DegradationSpec {
            rho: 2,
            noise_sigma: 651.0,
            rng_seed: 0,
            sigma_is_variance: false,
            downsample: DownsampleKind::BlockAverage,
        }
    }
}

/// Per-pixel noise standard deviation at depth `d`.
pub fn noise_std(spec: &DegradationSpec, d: f64) -> f64 {
    let s = spec.noise_sigma / d.max(1e-12);
    if spec.sigma_is_variance {
        s.sqrt()
    } else {
        s
    }
}

/// Downsample by the scale factor, add depth-dependent noise, and
/// bilinearly upsample back: returns the (noisy) low-resolution observation
/// and the mid-resolution network input.
pub fn degrade(t: &Field2D, spec: &DegradationSpec) -> Result<(Field2D, Field2D)> {
    if spec.rho < 2 {
        return Err(Error::InvalidArgument(
            "degradation scale factor must be at least 2".into(),
        ));
    }
    let mut s_lr = grid::downsample(t, spec.rho, spec.downsample)?;
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for v in s_lr.data_mut() {
            *v += noise_std(spec, *v) * normal.sample(&mut rng);
        }
    }
    let s_mid = grid::bilinear_upsample(&s_lr, spec.rho as f64)?;
    Ok((s_lr, s_mid))
}

/// Independent RNG stream for one item of a generation run, derived from
/// the master seed and the item index so parallel and serial generation
/// produce identical outputs.
pub fn derive_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&index.to_le_bytes());
    key[16..24].copy_from_slice(b"scenegen");
    ChaCha8Rng::from_seed(key)
}
