//! Fixed discrete differential operators and resampling on dense fields.
//!
//! The gradient operators use forward differences with Neumann (reflecting)
//! boundaries: the last column/row of the respective difference channel is
//! zero. The transposed operators are the exact adjoints under the standard
//! inner product, which corresponds to negative symmetric (Dirichlet)
//! boundary handling. They are written as explicit stencils so the boundary
//! behavior is exact; generic convolution lives in the network module.

use crate::error::{Error, Result};
use crate::field::Field2D;

/// Forward-difference gradient of a scalar field.
///
/// Channel 0 holds the x-difference (zero in the last column), channel 1 the
/// y-difference (zero in the last row).
pub fn grad(u: &Field2D) -> Field2D {
    assert_eq!(u.channels(), 1, "grad expects a 1-channel field");
    let (h, w) = (u.height(), u.width());
    let mut out = Field2D::zeros(2, h, w);
    let src = u.plane(0);
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let dx = &mut out.plane_mut(0)[y * w..(y + 1) * w];
        for x in 0..w - 1 {
            dx[x] = row[x + 1] - row[x];
        }
    }
    for y in 0..h - 1 {
        for x in 0..w {
            let v = src[(y + 1) * w + x] - src[y * w + x];
            out.plane_mut(1)[y * w + x] = v;
        }
    }
    out
}

/// Exact adjoint of [`grad`]: `<grad(u), p> == <u, grad_t(p)>` for all u, p.
pub fn grad_t(p: &Field2D) -> Field2D {
    assert_eq!(p.channels(), 2, "grad_t expects a 2-channel field");
    let (h, w) = (p.height(), p.width());
    let mut out = Field2D::zeros(1, h, w);
    let px = p.plane(0);
    let py = p.plane(1);
    let dst = out.plane_mut(0);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut v = 0.0;
            if x > 0 {
                v += px[i - 1];
            }
            if x < w - 1 {
                v -= px[i];
            }
            if y > 0 {
                v += py[i - w];
            }
            if y < h - 1 {
                v -= py[i];
            }
            dst[i] = v;
        }
    }
    out
}

/// Full Jacobian of a 2-channel field by forward differences.
///
/// Output channels are (dx v0, dy v0, dx v1, dy v1), Neumann boundaries.
pub fn grad_v(v: &Field2D) -> Field2D {
    assert_eq!(v.channels(), 2, "grad_v expects a 2-channel field");
    let (h, w) = (v.height(), v.width());
    let mut out = Field2D::zeros(4, h, w);
    for c in 0..2 {
        let src = v.plane(c);
        for y in 0..h {
            for x in 0..w - 1 {
                let i = y * w + x;
                out.plane_mut(2 * c)[i] = src[i + 1] - src[i];
            }
        }
        for y in 0..h - 1 {
            for x in 0..w {
                let i = y * w + x;
                out.plane_mut(2 * c + 1)[i] = src[i + w] - src[i];
            }
        }
    }
    out
}

/// Exact adjoint of [`grad_v`].
pub fn grad_tv(q: &Field2D) -> Field2D {
    assert_eq!(q.channels(), 4, "grad_tv expects a 4-channel field");
    let (h, w) = (q.height(), q.width());
    let mut out = Field2D::zeros(2, h, w);
    for c in 0..2 {
        let qx = q.plane(2 * c);
        let qy = q.plane(2 * c + 1);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mut v = 0.0;
                if x > 0 {
                    v += qx[i - 1];
                }
                if x < w - 1 {
                    v -= qx[i];
                }
                if y > 0 {
                    v += qy[i - w];
                }
                if y < h - 1 {
                    v -= qy[i];
                }
                dst[i] = v;
            }
        }
    }
    out
}

/// Align-corners bilinear upsampling of a scalar field by factor `rho > 1`.
///
/// Output size is `round(rho * h) x round(rho * w)`; input samples are
/// reproduced exactly at aligned coordinates.
pub fn bilinear_upsample(u: &Field2D, rho: f64) -> Result<Field2D> {
    assert_eq!(u.channels(), 1, "bilinear_upsample expects a 1-channel field");
    if rho <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "upsampling factor must be > 1, got {rho}"
        )));
    }
    let (h, w) = (u.height(), u.width());
    let oh = (rho * h as f64).round() as usize;
    let ow = (rho * w as f64).round() as usize;
    Ok(resize_bilinear(u, oh, ow))
}

/// Align-corners bilinear resize to an explicit output size.
pub fn resize_bilinear(u: &Field2D, oh: usize, ow: usize) -> Field2D {
    let (h, w) = (u.height(), u.width());
    let src = u.plane(0);
    let sy = if oh > 1 {
        (h - 1) as f64 / (oh - 1) as f64
    } else {
        0.0
    };
    let sx = if ow > 1 {
        (w - 1) as f64 / (ow - 1) as f64
    } else {
        0.0
    };
    let mut out = Field2D::zeros(1, oh, ow);
    let dst = out.plane_mut(0);
    for y in 0..oh {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for x in 0..ow {
            let fx = x as f64 * sx;
            let x0 = (fx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            let v00 = src[y0 * w + x0];
            let v01 = src[y0 * w + x1];
            let v10 = src[y1 * w + x0];
            let v11 = src[y1 * w + x1];
            dst[y * ow + x] = v00 * (1.0 - wy) * (1.0 - wx)
                + v01 * (1.0 - wy) * wx
                + v10 * wy * (1.0 - wx)
                + v11 * wy * wx;
        }
    }
    out
}

/// Catmull-Rom cubic kernel (a = -0.5), the conventional bicubic baseline.
fn catmull_rom(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Align-corners bicubic (Catmull-Rom) upsampling; borders clamp the
/// 4-tap stencil. Same size convention as [`bilinear_upsample`].
pub fn bicubic_upsample(u: &Field2D, rho: f64) -> Result<Field2D> {
    assert_eq!(u.channels(), 1, "bicubic_upsample expects a 1-channel field");
    if rho <= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "upsampling factor must be > 1, got {rho}"
        )));
    }
    let (h, w) = (u.height(), u.width());
    let oh = (rho * h as f64).round() as usize;
    let ow = (rho * w as f64).round() as usize;
    let src = u.plane(0);
    let sy = if oh > 1 {
        (h - 1) as f64 / (oh - 1) as f64
    } else {
        0.0
    };
    let sx = if ow > 1 {
        (w - 1) as f64 / (ow - 1) as f64
    } else {
        0.0
    };
    let mut out = Field2D::zeros(1, oh, ow);
    let dst = out.plane_mut(0);
    for y in 0..oh {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as isize).min(h as isize - 1);
        let ty = fy - y0 as f64;
        let wy: Vec<f64> = (-1..3).map(|k| catmull_rom(ty - k as f64)).collect();
        for x in 0..ow {
            let fx = x as f64 * sx;
            let x0 = (fx.floor() as isize).min(w as isize - 1);
            let tx = fx - x0 as f64;
            let mut acc = 0.0;
            for (ky, wyv) in wy.iter().enumerate() {
                let iy = (y0 + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                for kx in 0..4 {
                    let ix = (x0 + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                    acc += wyv * catmull_rom(tx - (kx as f64 - 1.0)) * src[iy * w + ix];
                }
            }
            dst[y * ow + x] = acc;
        }
    }
    Ok(out)
}

/// Downsampling kernel selection. Block averaging models sensor area
/// integration and is the default; point decimation is kept for protocol
/// studies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DownsampleKind {
    #[default]
    BlockAverage,
    PointDecimate,
}

/// Downsample a scalar field by an integer factor `rho >= 2`.
pub fn downsample(t: &Field2D, rho: usize, kind: DownsampleKind) -> Result<Field2D> {
    assert_eq!(t.channels(), 1, "downsample expects a 1-channel field");
    if rho < 2 {
        return Err(Error::InvalidArgument(format!(
            "downsampling factor must be >= 2, got {rho}"
        )));
    }
    let (h, w) = (t.height(), t.width());
    if h % rho != 0 || w % rho != 0 {
        return Err(Error::InvalidArgument(format!(
            "field size {h}x{w} not divisible by factor {rho}"
        )));
    }
    let (oh, ow) = (h / rho, w / rho);
    let src = t.plane(0);
    let mut out = Field2D::zeros(1, oh, ow);
    let dst = out.plane_mut(0);
    match kind {
        DownsampleKind::BlockAverage => {
            let inv = 1.0 / (rho * rho) as f64;
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..rho {
                        for dx in 0..rho {
                            acc += src[(y * rho + dy) * w + x * rho + dx];
                        }
                    }
                    dst[y * ow + x] = acc * inv;
                }
            }
        }
        DownsampleKind::PointDecimate => {
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[y * rho * w + x * rho];
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_field(ch: usize, h: usize, w: usize, rng: &mut impl Rng) -> Field2D {
        Field2D::from_vec(ch, h, w, (0..ch * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Independent adjoint oracle: apply grad to every basis vector and
    /// assemble the adjoint matrix column by column.
    fn adjoint_by_matrix(p: &Field2D) -> Field2D {
        let (h, w) = (p.height(), p.width());
        let mut out = Field2D::zeros(1, h, w);
        for y in 0..h {
            for x in 0..w {
                let mut basis = Field2D::zeros(1, h, w);
                *basis.at_mut(0, y, x) = 1.0;
                *out.at_mut(0, y, x) = grad(&basis).inner(p);
            }
        }
        out
    }

    fn adjoint_v_by_matrix(q: &Field2D) -> Field2D {
        let (h, w) = (q.height(), q.width());
        let mut out = Field2D::zeros(2, h, w);
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let mut basis = Field2D::zeros(2, h, w);
                    *basis.at_mut(c, y, x) = 1.0;
                    *out.at_mut(c, y, x) = grad_v(&basis).inner(q);
                }
            }
        }
        out
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let u = Field2D::constant(1, 5, 7, 5.0);
        let g = grad(&u);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_of_ramp() {
        let u = Field2D::from_fn(4, 4, |_, x| x as f64);
        let g = grad(&u);
        for y in 0..4 {
            for x in 0..4 {
                let expect = if x < 3 { 1.0 } else { 0.0 };
                assert_eq!(g.at(0, y, x), expect);
                assert_eq!(g.at(1, y, x), 0.0);
            }
        }
    }

    #[test]
    fn grad_boundary_rows_cols_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(1, 6, 9, &mut rng);
        let g = grad(&u);
        for y in 0..6 {
            assert_eq!(g.at(0, y, 8), 0.0);
        }
        for x in 0..9 {
            assert_eq!(g.at(1, 5, x), 0.0);
        }
    }

    #[test]
    fn grad_t_of_zero_is_zero() {
        let p = Field2D::zeros(2, 4, 4);
        assert!(grad_t(&p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_t_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // single nonzero entry first, then dense
        let mut p = Field2D::zeros(2, 5, 5);
        *p.at_mut(0, 2, 2) = 1.0;
        let got = grad_t(&p);
        let want = adjoint_by_matrix(&p);
        assert_eq!(got.data(), want.data());

        let p = random_field(2, 6, 6, &mut rng);
        let got = grad_t(&p);
        let want = adjoint_by_matrix(&p);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_tv_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_field(4, 6, 6, &mut rng);
        let got = grad_tv(&q);
        let want = adjoint_v_by_matrix(&q);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjointness_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let u = random_field(1, 16, 16, &mut rng);
            let p = random_field(2, 16, 16, &mut rng);
            let lhs = grad(&u).inner(&p);
            let rhs = u.inner(&grad_t(&p));
            assert!((lhs - rhs).abs() <= 1e-12 * u.norm2() * p.norm2() + 1e-14);

            let v = random_field(2, 16, 16, &mut rng);
            let q = random_field(4, 16, 16, &mut rng);
            let lhs = grad_v(&v).inner(&q);
            let rhs = v.inner(&grad_tv(&q));
            assert!((lhs - rhs).abs() <= 1e-12 * v.norm2() * q.norm2() + 1e-14);
        }
    }

    #[test]
    fn grad_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u1 = random_field(1, 8, 8, &mut rng);
        let u2 = random_field(1, 8, 8, &mut rng);
        let (a, b) = (1.7, -0.3);
        let lhs = grad(&u1.scale(a).add(&u2.scale(b)));
        let rhs = grad(&u1).scale(a).add(&grad(&u2).scale(b));
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            let tol = 1e-14 * (x.abs().max(y.abs()).max(1.0));
            assert!((x - y).abs() <= tol);
        }
    }

    #[test]
    fn grad_v_affine() {
        let mut v = Field2D::zeros(2, 5, 5);
        for y in 0..5 {
            for x in 0..5 {
                *v.at_mut(0, y, x) = x as f64;
                *v.at_mut(1, y, x) = y as f64;
            }
        }
        let j = grad_v(&v);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(j.at(0, y, x), 1.0);
                assert_eq!(j.at(1, y, x), 0.0);
                assert_eq!(j.at(2, y, x), 0.0);
                assert_eq!(j.at(3, y, x), 1.0);
            }
        }
    }

    #[test]
    fn upsample_constant_and_closed_form() {
        let u = Field2D::constant(1, 3, 3, 2.5);
        let up = bilinear_upsample(&u, 2.0).unwrap();
        assert_eq!(up.height(), 6);
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-15));

        // 2x2 [[0,1],[0,1]] at rho=2 (align-corners): rows [0, 1/3, 2/3, 1]
        let u = Field2D::from_vec(1, 2, 2, vec![0.0, 1.0, 0.0, 1.0]);
        let up = bilinear_upsample(&u, 2.0).unwrap();
        for y in 0..4 {
            for (x, want) in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].iter().enumerate() {
                assert!((up.at(0, y, x) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn upsample_reproduces_linear_ramp() {
        // align-corners bilinear is exact on affine signals
        let u = Field2D::from_fn(4, 4, |y, x| 2.0 * x as f64 - 0.5 * y as f64 + 1.0);
        let up = bilinear_upsample(&u, 2.0).unwrap();
        let (oh, ow) = (up.height(), up.width());
        for y in 0..oh {
            for x in 0..ow {
                let sx = x as f64 * 3.0 / (ow - 1) as f64;
                let sy = y as f64 * 3.0 / (oh - 1) as f64;
                let want = 2.0 * sx - 0.5 * sy + 1.0;
                assert!((up.at(0, y, x) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn upsample_rejects_small_factor() {
        let u = Field2D::zeros(1, 4, 4);
        assert!(bilinear_upsample(&u, 1.0).is_err());
    }

    #[test]
    fn downsample_block_average() {
        let t = Field2D::from_vec(1, 2, 2, vec![1.0, 3.0, 5.0, 7.0]);
        let d = downsample(&t, 2, DownsampleKind::BlockAverage).unwrap();
        assert_eq!(d.data(), &[4.0]);

        let t = Field2D::constant(1, 4, 4, 9.0);
        let d = downsample(&t, 2, DownsampleKind::BlockAverage).unwrap();
        assert!(d.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn downsample_point_decimate() {
        let t = Field2D::from_fn(4, 4, |y, x| (y * 4 + x) as f64);
        let d = downsample(&t, 2, DownsampleKind::PointDecimate).unwrap();
        assert_eq!(d.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let t = Field2D::zeros(1, 5, 4);
        assert!(downsample(&t, 2, DownsampleKind::BlockAverage).is_err());
    }

    /// Symbolic check of the affine round trip. Block averaging samples an
    /// affine plane at block centers; align-corners upsampling then rescales
    /// the slope by rho*(m-1)/(rho*m-1) and re-centers it. The round trip is
    /// therefore affine with those exact coefficients (it is not the
    /// identity; the deviation vanishes at the image center and grows toward
    /// the boundary).
    #[test]
    fn affine_round_trip_matches_closed_form() {
        let (a, b, c) = (0.7, -0.3, 2.0);
        let (h, w, rho) = (8usize, 8usize, 2usize);
        let t = Field2D::from_fn(h, w, |y, x| a * x as f64 + b * y as f64 + c);
        let d = downsample(&t, rho, DownsampleKind::BlockAverage).unwrap();
        let up = bilinear_upsample(&d, rho as f64).unwrap();
        let (m, n) = (h / rho, h);
        let slope_scale = rho as f64 * (m - 1) as f64 / (n - 1) as f64;
        let off = (rho - 1) as f64 / 2.0;
        for y in 0..h {
            for x in 0..w {
                let want = a * (slope_scale * x as f64 + off)
                    + b * (slope_scale * y as f64 + off)
                    + c;
                assert!((up.at(0, y, x) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bicubic_interpolates_samples_and_linears() {
        // aligned coordinates reproduce the input samples exactly
        let u = Field2D::from_fn(4, 4, |y, x| ((y * 7 + x * 3) % 11) as f64);
        let up = bicubic_upsample(&u, 3.0).unwrap();
        let s = 11.0 / 3.0; // (12-1)/(4-1) inverse: aligned every s
        for y in 0..4 {
            for x in 0..4 {
                let oy = (y as f64 * s).round() as usize;
                let ox = (x as f64 * s).round() as usize;
                if (oy as f64 - y as f64 * s).abs() < 1e-9
                    && (ox as f64 - x as f64 * s).abs() < 1e-9
                {
                    assert!((up.at(0, oy, ox) - u.at(0, y, x)).abs() < 1e-12);
                }
            }
        }

        // Catmull-Rom reproduces affine signals away from the clamped border
        let plane = Field2D::from_fn(6, 6, |y, x| 1.5 * x as f64 - 0.25 * y as f64 + 3.0);
        let up = bicubic_upsample(&plane, 2.0).unwrap();
        let scale = 5.0 / 11.0;
        for y in 0..12 {
            for x in 0..12 {
                let (fy, fx) = (y as f64 * scale, x as f64 * scale);
                if fy < 1.0 || fx < 1.0 || fy > 4.0 || fx > 4.0 {
                    continue;
                }
                let want = 1.5 * fx - 0.25 * fy + 3.0;
                assert!((up.at(0, y, x) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bicubic_rejects_non_upsampling_factor() {
        let u = Field2D::zeros(1, 4, 4);
        assert!(bicubic_upsample(&u, 1.0).is_err());
    }
}
