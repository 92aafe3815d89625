//! End-to-end runs: dataset generation, two-stage training, inference, and
//! evaluation. The command-line binary is a thin wrapper around these
//! functions.
//!
//! Every run writes a JSON config echo next to its outputs; replaying a run
//! from the echo (same seed, single thread or not — parallelism is
//! order-independent here) reproduces the artifacts byte for byte.

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::grid;
use crate::io::{self, Checkpoint, CheckpointMeta};
use crate::metrics::{self, EvalResult, Method};
use crate::net::{self, ConvNet};
use crate::parallel;
use crate::render::{self, DegradationSpec, SceneSpec};
use crate::solver::{self, SolverParams, EDGE_EPS};
use crate::train::{self, TrainConfig, TrainSample};
use rand::{Rng, SeedableRng};
use std::path::{Path, PathBuf};

/// Environment variable overriding the default worker count.
pub const THREADS_ENV: &str = "DEPTHSR_THREADS";

/// Default multiplicative normalization applied to raw depths before the
/// network and solver (raw depths of a few thousand map to a few units).
pub const DEFAULT_VALUE_SCALE: f64 = 1e-3;

/// Resolve the worker count: explicit flag, then environment, then all
/// cores. Installs the global thread pool on first use.
pub fn configure_threads(requested: Option<usize>) -> Result<usize> {
    let n = match requested {
        Some(n) if n >= 1 => n,
        Some(_) => return Err(Error::Config("thread count must be >= 1".into())),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("bad {THREADS_ENV} value '{v}'")))?,
            Err(_) => 0, // rayon default: all cores
        },
    };
    #[cfg(feature = "parallel")]
    if n > 0 {
        // fails harmlessly if a pool already exists (e.g. in tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(if n == 0 { num_threads() } else { n })
}

fn num_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Write a JSON config echo for exact replay.
pub fn write_config_echo<T: serde::Serialize>(dir: &Path, name: &str, config: &T) -> Result<PathBuf> {
    let path = dir.join(name);
    let json = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// dataset generation

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenerateConfig {
    pub count: usize,
    pub master_seed: u64,
    pub scene: SceneSpec,
    pub degradation: DegradationSpec,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub degradation_seed: u64,
    pub truth: String,
    pub lowres: String,
    pub input: String,
    pub sha256_truth: String,
    pub sha256_lowres: String,
    pub sha256_input: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: GenerateConfig,
    pub samples: Vec<ManifestEntry>,
}

/// Render `count` random scenes, degrade each, and write
/// (ground truth, noisy low-res, mid-res input) PFM triples plus a JSON
/// manifest. Scene `i` draws from an RNG derived from (master seed, i), so
/// parallel and serial runs produce identical files.
pub fn generate_dataset(cfg: &GenerateConfig, out_dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = parallel::map_indexed(cfg.count, |i| -> Result<ManifestEntry> {
        let mut rng = render::derive_rng(cfg.master_seed, i as u64);
        let scene = render::sample_scene(&mut rng, &cfg.scene);
        let truth = render::render_depth(&scene);
        let degradation_seed: u64 = rng.gen();
        let spec = DegradationSpec {
            rng_seed: degradation_seed,
            ..cfg.degradation.clone()
        };
        let (lowres, input) = render::degrade(&truth, &spec)?;

        let names = [
            format!("truth_{i:05}.pfm"),
            format!("lowres_{i:05}.pfm"),
            format!("input_{i:05}.pfm"),
        ];
        let fields = [&truth, &lowres, &input];
        let mut hashes = Vec::with_capacity(3);
        for (name, field) in names.iter().zip(fields) {
            let path = out_dir.join(name);
            io::write_pfm(&path, field)?;
            hashes.push(io::sha256_file(&path)?);
        }
        Ok(ManifestEntry {
            index: i,
            degradation_seed,
            truth: names[0].clone(),
            lowres: names[1].clone(),
            input: names[2].clone(),
            sha256_truth: hashes[0].clone(),
            sha256_lowres: hashes[1].clone(),
            sha256_input: hashes[2].clone(),
        })
    });
    let samples = entries.into_iter().collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: 1,
        config: cfg.clone(),
        samples,
    };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    write_config_echo(out_dir, "generate-config.json", cfg)?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, format!("manifest: {e}")))
}

/// A dataset pair in raw depth units.
#[derive(Debug, Clone)]
pub struct DatasetPair {
    pub name: String,
    pub truth: Field2D,
    pub lowres: Field2D,
    pub input: Field2D,
}

/// Load every pair referenced by a manifest (paths relative to it).
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<DatasetPair>> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .samples
        .iter()
        .map(|e| {
            Ok(DatasetPair {
                name: e.truth.trim_end_matches(".pfm").replace("truth_", "scene_"),
                truth: io::read_pfm(&dir.join(&e.truth))?,
                lowres: io::read_pfm(&dir.join(&e.lowres))?,
                input: io::read_pfm(&dir.join(&e.input))?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    Pretrain,
    Joint,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainRunConfig {
    pub stage: TrainStage,
    pub train: TrainConfig,
    /// Network depth/width used when no checkpoint seeds the run.
    pub net_depth: usize,
    pub net_features: usize,
    pub value_scale: f64,
    /// Solver parameters for the joint stage (pretrain stores them untouched).
    pub solver: SolverParams,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            stage: TrainStage::Pretrain,
            train: TrainConfig::default(),
            net_depth: 6,
            net_features: 32,
            value_scale: DEFAULT_VALUE_SCALE,
            solver: SolverParams::default(),
        }
    }
}

fn normalized_samples(pairs: &[DatasetPair], scale: f64) -> Vec<TrainSample> {
    pairs
        .iter()
        .map(|p| TrainSample {
            input: p.input.scale(scale),
            truth: p.truth.scale(scale),
        })
        .collect()
}

/// Run one training stage and return the resulting checkpoint and the
/// per-epoch loss curve. The joint stage resumes from `base`, which must be
/// a pretrain (or earlier joint) checkpoint.
pub fn run_training(
    cfg: &TrainRunConfig,
    pairs: &[DatasetPair],
    base: Option<&Checkpoint>,
) -> Result<(Checkpoint, Vec<f64>)> {
    let samples = normalized_samples(pairs, cfg.value_scale);
    let (mut netw, mut params) = match (cfg.stage, base) {
        (TrainStage::Pretrain, Some(c)) => (c.net.clone(), c.params.clone()),
        (TrainStage::Pretrain, None) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.train.rng_seed);
            (
                ConvNet::new(cfg.net_depth, cfg.net_features, &mut rng),
                cfg.solver.clone(),
            )
        }
        (TrainStage::Joint, Some(c)) => {
            if c.meta.value_scale != cfg.value_scale {
                return Err(Error::Config(format!(
                    "value scale mismatch: checkpoint {} vs run {}",
                    c.meta.value_scale, cfg.value_scale
                )));
            }
            (c.net.clone(), c.params.clone())
        }
        (TrainStage::Joint, None) => {
            return Err(Error::Config(
                "pretrain checkpoint required for the joint stage".into(),
            ))
        }
    };
    let curve = match cfg.stage {
        TrainStage::Pretrain => train::train_pretrain(&mut netw, &samples, &cfg.train)?,
        TrainStage::Joint => train::train_joint(&mut netw, &mut params, &samples, &cfg.train)?,
    };
    let ckpt = Checkpoint {
        net: netw,
        params,
        meta: CheckpointMeta {
            value_scale: cfg.value_scale,
            stage: match cfg.stage {
                TrainStage::Pretrain => "pretrain".into(),
                TrainStage::Joint => "joint".into(),
            },
            epochs_completed: cfg.train.epochs,
            final_train_loss: *curve.last().unwrap_or(&f64::NAN),
            rng_seed: cfg.train.rng_seed,
        },
    };
    Ok((ckpt, curve))
}

// ---------------------------------------------------------------------------
// inference and evaluation

/// Run the solver keeping a per-iteration energy log.
pub fn solve_with_energy_log(
    g: &Field2D,
    h: &Field2D,
    params: &SolverParams,
) -> Result<(Field2D, Vec<f64>)> {
    let t = solver::diffusion_tensor(h, params.beta, params.gamma, EDGE_EPS);
    let mut state = solver::SolverState::init(g);
    let mut log = Vec::with_capacity(params.iters + 1);
    log.push(solver::energy(&state.u, &state.v, &t, g, params));
    for _ in 0..params.iters {
        state = solver::pd_iteration(&state, &t, g, params)?;
        log.push(solver::energy(&state.u, &state.v, &t, g, params));
    }
    Ok((state.u, log))
}

/// Network + solver output for a mid-resolution input in raw units.
/// Returns the refined depth and the edge estimate (also raw units).
pub fn refine_with_checkpoint(
    ckpt: &Checkpoint,
    s_mid: &Field2D,
    run_solver: bool,
) -> Result<(Field2D, Field2D)> {
    let scale = ckpt.meta.value_scale;
    let x = s_mid.scale(scale);
    let (g, h) = net::net_forward(&ckpt.net, &x);
    let out = if run_solver && ckpt.params.iters > 0 {
        solver::solve(&g, &h, &ckpt.params)?
    } else {
        g
    };
    Ok((out.scale(1.0 / scale), h.scale(1.0 / scale)))
}

/// Upsample a low-resolution depth map with the given method
/// (all inputs/outputs in raw depth units).
pub fn upsample_with_method(
    method: Method,
    lowres: &Field2D,
    rho: usize,
    ckpt: Option<&Checkpoint>,
) -> Result<Field2D> {
    match method {
        Method::Bilinear => grid::bilinear_upsample(lowres, rho as f64),
        Method::Bicubic => grid::bicubic_upsample(lowres, rho as f64),
        Method::CnnOnly | Method::CnnPlusAtgv | Method::AtgvNet => {
            let ckpt = ckpt.ok_or_else(|| {
                Error::Config(format!("method {method} requires a model checkpoint"))
            })?;
            let s_mid = grid::bilinear_upsample(lowres, rho as f64)?;
            let run_solver = method != Method::CnnOnly;
            Ok(refine_with_checkpoint(ckpt, &s_mid, run_solver)?.0)
        }
    }
}

/// Evaluate one method over a dataset: one result row per sample, computed
/// in parallel, aggregated in index order.
pub fn evaluate_method(
    method: Method,
    pairs: &[DatasetPair],
    rho: usize,
    ckpt: Option<&Checkpoint>,
) -> Result<Vec<EvalResult>> {
    if method.needs_checkpoint() && ckpt.is_none() {
        return Err(Error::Config(format!(
            "method {method} requires a model checkpoint"
        )));
    }
    let rows = parallel::map_indexed(pairs.len(), |i| -> Result<EvalResult> {
        let p = &pairs[i];
        let pred = upsample_with_method(method, &p.lowres, rho, ckpt)?;
        let mask = metrics::mask_valid(&p.truth);
        let mask = if mask.iter().all(|&v| v) {
            None
        } else {
            Some(mask)
        };
        Ok(EvalResult {
            method: method.name().into(),
            sample: p.name.clone(),
            rho,
            rmse: metrics::rmse(&pred, &p.truth, mask.as_deref())?,
            mae: metrics::mae(&pred, &p.truth, mask.as_deref())?,
        })
    });
    rows.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_generate_config(count: usize, seed: u64) -> GenerateConfig {
        GenerateConfig {
            count,
            master_seed: seed,
            scene: SceneSpec {
                width: 16,
                height: 16,
                ..SceneSpec::default()
            },
            degradation: DegradationSpec::default(),
        }
    }

    #[test]
    fn generate_zero_count_writes_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small_generate_config(0, 1), dir.path()).unwrap();
        assert!(m.samples.is_empty());
        assert!(dir.path().join("manifest.json").exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn generate_is_reproducible_byte_for_byte() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let cfg = small_generate_config(3, 77);
        let a = generate_dataset(&cfg, dir_a.path()).unwrap();
        let b = generate_dataset(&cfg, dir_b.path()).unwrap();
        assert_eq!(a.samples, b.samples);
        for e in &a.samples {
            for f in [&e.truth, &e.lowres, &e.input] {
                assert_eq!(
                    std::fs::read(dir_a.path().join(f)).unwrap(),
                    std::fs::read(dir_b.path().join(f)).unwrap()
                );
            }
        }
        // replay from the manifest's own config
        let m = read_manifest(&dir_a.path().join("manifest.json")).unwrap();
        let dir_c = tempfile::tempdir().unwrap();
        let c = generate_dataset(&m.config, dir_c.path()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn dataset_loads_and_evaluates_baselines() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small_generate_config(2, 5), dir.path()).unwrap();
        let pairs = load_dataset(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].truth.height(), 16);
        assert_eq!(pairs[0].lowres.height(), 8);

        for method in [Method::Bilinear, Method::Bicubic] {
            let rows = evaluate_method(method, &pairs, 2, None).unwrap();
            assert_eq!(rows.len(), 2);
            for r in &rows {
                assert!(r.rmse.is_finite() && r.rmse >= r.mae);
            }
        }
        // learned methods demand a checkpoint
        assert!(evaluate_method(Method::AtgvNet, &pairs, 2, None).is_err());
    }

    #[test]
    fn training_pipeline_smoke_and_stage_precondition() {
        let dir = tempfile::tempdir().unwrap();
        let gen = GenerateConfig {
            count: 2,
            master_seed: 3,
            scene: SceneSpec {
                width: 16,
                height: 16,
                ..SceneSpec::default()
            },
            degradation: DegradationSpec::default(),
        };
        generate_dataset(&gen, dir.path()).unwrap();
        let pairs = load_dataset(&dir.path().join("manifest.json")).unwrap();

        let cfg = TrainRunConfig {
            stage: TrainStage::Pretrain,
            train: TrainConfig {
                epochs: 2,
                patch_size: 16,
                batch_size: 2,
                ..TrainConfig::default()
            },
            net_depth: 3,
            net_features: 4,
            solver: SolverParams {
                iters: 2,
                ..SolverParams::default()
            },
            ..TrainRunConfig::default()
        };
        assert!(matches!(
            run_training(
                &TrainRunConfig {
                    stage: TrainStage::Joint,
                    ..cfg.clone()
                },
                &pairs,
                None
            ),
            Err(Error::Config(_))
        ));

        let (pre, curve) = run_training(&cfg, &pairs, None).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(pre.meta.stage, "pretrain");

        let joint_cfg = TrainRunConfig {
            stage: TrainStage::Joint,
            train: TrainConfig {
                epochs: 1,
                patch_size: 16,
                batch_size: 2,
                ..TrainConfig::default()
            },
            ..cfg
        };
        let (joint, jcurve) = run_training(&joint_cfg, &pairs, Some(&pre)).unwrap();
        assert_eq!(jcurve.len(), 1);
        assert_eq!(joint.meta.stage, "joint");

        // cnn-only equals the solver variant with zero iterations, bitwise
        let mut zero_iter = joint.clone();
        zero_iter.params.iters = 0;
        let a = upsample_with_method(Method::CnnOnly, &pairs[0].lowres, 2, Some(&zero_iter))
            .unwrap();
        let b = upsample_with_method(Method::AtgvNet, &pairs[0].lowres, 2, Some(&zero_iter))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn energy_log_has_decreasing_tail() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small_generate_config(1, 9), dir.path()).unwrap();
        let pairs = load_dataset(&dir.path().join("manifest.json")).unwrap();
        let g = pairs[0].input.scale(DEFAULT_VALUE_SCALE);
        let h = Field2D::zeros(2, g.height(), g.width());
        let params = SolverParams {
            iters: 60,
            ..SolverParams::default()
        };
        let (_, log) = solve_with_energy_log(&g, &h, &params).unwrap();
        assert_eq!(log.len(), 61);
        assert!(log.last().unwrap() < &log[0]);
        let tail = &log[log.len() - 6..];
        let tail_min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        let global_min = log.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(tail_min <= global_min * (1.0 + 1e-3));
    }

    #[test]
    fn config_echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainRunConfig::default();
        let path = write_config_echo(dir.path(), "train-config.json", &cfg).unwrap();
        let back: TrainRunConfig =
            serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(cfg, back);
    }
}
