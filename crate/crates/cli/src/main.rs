//! `depthsr` — depth map super-resolution from the command line.
//!
//! Subcommands: `generate` (synthetic dataset), `train` (two-stage),
//! `upsample` (single map inference), `eval` (result tables). Every run
//! writes a JSON config echo so it can be replayed exactly.

use clap::{Args, Parser, Subcommand};
use depthsr::metrics::{self, Method};
use depthsr::pipeline::{
    self, GenerateConfig, TrainRunConfig, TrainStage, DEFAULT_VALUE_SCALE,
};
use depthsr::render::{DegradationSpec, SceneSpec};
use depthsr::solver::SolverParams;
use depthsr::train::TrainConfig;
use depthsr::{Error, Field2D};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "depthsr", version, about = "Single depth map super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: DEPTHSR_THREADS env var, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Numeric precision; only "f64" is implemented.
    #[arg(long, global = true, default_value = "f64")]
    precision: String,
}

#[derive(Subcommand)]
enum Command {
    /// Render random scenes and write a training dataset with a manifest.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Ground-truth image size (square).
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Upsampling factor of the degradation.
        #[arg(long, default_value_t = 2)]
        rho: usize,
        /// Depth-dependent noise scale (0 disables noise).
        #[arg(long, default_value_t = 651.0)]
        sigma: f64,
        /// Replay an existing manifest's configuration instead of the flags.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Train the network (stage "pretrain") or the full model ("joint").
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "pretrain")]
        stage: String,
        /// Checkpoint to resume from (required for --stage joint).
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        patch_size: usize,
        #[arg(long, default_value_t = 16)]
        batch_size: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// Network depth (layer count).
        #[arg(long, default_value_t = 6)]
        depth: usize,
        /// Hidden feature maps per layer.
        #[arg(long, default_value_t = 32)]
        features: usize,
        /// Unrolled solver iterations (joint stage).
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
    /// Upsample one low-resolution depth map.
    Upsample {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "bilinear")]
        method: String,
        #[arg(long, default_value_t = 2)]
        rho: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Override the checkpoint's solver iteration count.
        #[arg(long)]
        iters: Option<usize>,
        /// Write the per-iteration energy log to this file.
        #[arg(long)]
        dump_energy: Option<PathBuf>,
        /// Write the network's edge estimate (2-channel) as two PFM files
        /// with this prefix.
        #[arg(long)]
        edge_map: Option<PathBuf>,
    },
    /// Evaluate methods on a dataset and emit CSV / aligned tables.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated method list.
        #[arg(long, default_value = "bilinear,bicubic")]
        methods: String,
        #[arg(long)]
        rho: Option<usize>,
        /// Checkpoint used by learned methods.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Checkpoint used by atgv_net (falls back to --checkpoint).
        #[arg(long)]
        checkpoint_joint: Option<PathBuf>,
        /// Write the CSV table here (printed to stdout otherwise).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Directory for per-sample error maps (PFM + PNG).
        #[arg(long)]
        error_maps: Option<PathBuf>,
        /// Exit nonzero unless mean RMSE(atgv_net) <= mean RMSE(bilinear).
        #[arg(long, default_value_t = false)]
        check_ordering: bool,
    },
}

fn print_defaults() {
    let p = SolverParams::default();
    let t = TrainConfig::default();
    println!(
        "defaults: lr={} momentum={} iters={} alpha1={} alpha0={} beta={} gamma={} w_lambda={}",
        t.learning_rate, t.momentum, p.iters, p.alpha1, p.alpha0, p.beta, p.gamma, p.w_lambda
    );
}

fn setup(common: &CommonArgs) -> depthsr::Result<()> {
    if common.precision != "f64" {
        return Err(Error::Config(format!(
            "precision '{}' is not supported; all arithmetic is 64-bit",
            common.precision
        )));
    }
    let threads = pipeline::configure_threads(common.threads)?;
    print_defaults();
    println!("run: seed={} threads={}", common.seed, threads);
    Ok(())
}

fn run() -> depthsr::Result<()> {
    match Cli::parse().command {
        Command::Generate {
            common,
            out,
            count,
            size,
            rho,
            sigma,
            replay,
        } => {
            setup(&common)?;
            let cfg = match replay {
                Some(path) => pipeline::read_manifest(&path)?.config,
                None => GenerateConfig {
                    count,
                    master_seed: common.seed,
                    scene: SceneSpec {
                        width: size,
                        height: size,
                        ..SceneSpec::default()
                    },
                    degradation: DegradationSpec {
                        rho,
                        noise_sigma: sigma,
                        ..DegradationSpec::default()
                    },
                },
            };
            let manifest = pipeline::generate_dataset(&cfg, &out)?;
            println!(
                "wrote {} sample triples to {}",
                manifest.samples.len(),
                out.display()
            );
            Ok(())
        }
        Command::Train {
            common,
            manifest,
            out,
            stage,
            from,
            epochs,
            patch_size,
            batch_size,
            lr,
            momentum,
            depth,
            features,
            iters,
        } => {
            setup(&common)?;
            let stage = match stage.as_str() {
                "pretrain" => TrainStage::Pretrain,
                "joint" => TrainStage::Joint,
                other => {
                    return Err(Error::Config(format!(
                        "unknown stage '{other}' (expected pretrain or joint)"
                    )))
                }
            };
            let cfg = TrainRunConfig {
                stage,
                train: TrainConfig {
                    learning_rate: lr,
                    momentum,
                    epochs,
                    patch_size,
                    batch_size,
                    rng_seed: common.seed,
                },
                net_depth: depth,
                net_features: features,
                value_scale: DEFAULT_VALUE_SCALE,
                solver: SolverParams {
                    iters,
                    ..SolverParams::default()
                },
            };
            let base = match &from {
                Some(p) => Some(depthsr::io::read_checkpoint(p)?),
                None => {
                    if stage == TrainStage::Joint {
                        return Err(Error::Config(
                            "pretrain checkpoint required: pass --from".into(),
                        ));
                    }
                    None
                }
            };
            let pairs = pipeline::load_dataset(&manifest)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            pipeline::write_config_echo(&out, "train-config.json", &cfg)?;
            let (ckpt, curve) = pipeline::run_training(&cfg, &pairs, base.as_ref())?;
            let name = match stage {
                TrainStage::Pretrain => "pretrain.ckpt",
                TrainStage::Joint => "joint.ckpt",
            };
            depthsr::io::write_checkpoint(&out.join(name), &ckpt)?;
            let curve_txt: String = curve.iter().map(|l| format!("{l}\n")).collect();
            let curve_path = out.join(format!("{}-loss.txt", ckpt.meta.stage));
            std::fs::write(&curve_path, curve_txt).map_err(|e| Error::io(&curve_path, e))?;
            println!(
                "stage {} done: {} epochs, final loss {:.6e}; checkpoint {}",
                ckpt.meta.stage,
                curve.len(),
                ckpt.meta.final_train_loss,
                out.join(name).display()
            );
            Ok(())
        }
        Command::Upsample {
            common,
            input,
            output,
            method,
            rho,
            checkpoint,
            iters,
            dump_energy,
            edge_map,
        } => {
            setup(&common)?;
            let method: Method = method.parse()?;
            let lowres = depthsr::io::read_depth(&input)?;
            let mut ckpt = match &checkpoint {
                Some(p) => Some(depthsr::io::read_checkpoint(p)?),
                None => None,
            };
            if let (Some(c), Some(n)) = (ckpt.as_mut(), iters) {
                c.params.iters = n;
            }
            if let Some(dir) = output.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
            }
            let result = pipeline::upsample_with_method(method, &lowres, rho, ckpt.as_ref())?;
            depthsr::io::write_pfm(&output, &result)?;

            if dump_energy.is_some() || edge_map.is_some() {
                let c = ckpt.as_ref().ok_or_else(|| {
                    Error::Config("--dump-energy/--edge-map need a checkpoint".into())
                })?;
                let s_mid = depthsr::grid::bilinear_upsample(&lowres, rho as f64)?;
                let x = s_mid.scale(c.meta.value_scale);
                let (g, h) = depthsr::net::net_forward(&c.net, &x);
                if let Some(path) = dump_energy {
                    let (_, log) = pipeline::solve_with_energy_log(&g, &h, &c.params)?;
                    let text: String = log.iter().map(|e| format!("{e}\n")).collect();
                    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                }
                if let Some(prefix) = edge_map {
                    for (i, suffix) in ["x", "y"].iter().enumerate() {
                        let p = prefix.with_extension(format!("{suffix}.pfm"));
                        depthsr::io::write_pfm(&p, &h.channel(i))?;
                    }
                }
            }
            let echo_dir = output.parent().unwrap_or(Path::new("."));
            #[derive(serde::Serialize)]
            struct UpsampleEcho<'a> {
                input: &'a Path,
                output: &'a Path,
                method: &'a str,
                rho: usize,
                checkpoint: Option<&'a Path>,
                iters: Option<usize>,
                seed: u64,
            }
            pipeline::write_config_echo(
                echo_dir,
                "upsample-config.json",
                &UpsampleEcho {
                    input: &input,
                    output: &output,
                    method: method.name(),
                    rho,
                    checkpoint: checkpoint.as_deref(),
                    iters,
                    seed: common.seed,
                },
            )?;
            println!("wrote {}", output.display());
            Ok(())
        }
        Command::Eval {
            common,
            manifest,
            methods,
            rho,
            checkpoint,
            checkpoint_joint,
            csv,
            error_maps,
            check_ordering,
        } => {
            setup(&common)?;
            let pairs = pipeline::load_dataset(&manifest)?;
            let m = pipeline::read_manifest(&manifest)?;
            let rho = rho.unwrap_or(m.config.degradation.rho);
            let base_ckpt = match &checkpoint {
                Some(p) => Some(depthsr::io::read_checkpoint(p)?),
                None => None,
            };
            let joint_ckpt = match &checkpoint_joint {
                Some(p) => Some(depthsr::io::read_checkpoint(p)?),
                None => None,
            };
            let mut rows = Vec::new();
            for name in methods.split(',').filter(|s| !s.is_empty()) {
                let method: Method = name.trim().parse()?;
                let ckpt = match method {
                    Method::AtgvNet => joint_ckpt.as_ref().or(base_ckpt.as_ref()),
                    _ => base_ckpt.as_ref(),
                };
                rows.extend(pipeline::evaluate_method(method, &pairs, rho, ckpt)?);
            }
            let table = metrics::to_csv(&rows);
            match &csv {
                Some(path) => {
                    std::fs::write(path, &table).map_err(|e| Error::io(path, e))?
                }
                None => print!("{table}"),
            }
            println!("{}", metrics::to_aligned_table(&rows));
            if let Some(dir) = &error_maps {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                for r in &rows {
                    let pair = pairs.iter().find(|p| p.name == r.sample).unwrap();
                    let ckpt = match r.method.as_str() {
                        "atgv_net" => joint_ckpt.as_ref().or(base_ckpt.as_ref()),
                        _ => base_ckpt.as_ref(),
                    };
                    let pred = pipeline::upsample_with_method(
                        r.method.parse()?,
                        &pair.lowres,
                        r.rho,
                        ckpt,
                    )?;
                    let err: Field2D = pred.sub(&pair.truth).map(f64::abs);
                    let base = format!("{}_{}", r.method, r.sample);
                    depthsr::io::write_pfm(&dir.join(format!("{base}.pfm")), &err)?;
                    let max = err.data().iter().cloned().fold(0.0f64, f64::max);
                    depthsr::io::write_png_gray(
                        &dir.join(format!("{base}.png")),
                        &err,
                        0.0,
                        max.max(f64::MIN_POSITIVE),
                    )?;
                }
            }
            let echo_dir = csv
                .as_deref()
                .and_then(Path::parent)
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            #[derive(serde::Serialize)]
            struct EvalEcho<'a> {
                manifest: &'a Path,
                methods: &'a str,
                rho: usize,
                seed: u64,
            }
            pipeline::write_config_echo(
                echo_dir,
                "eval-config.json",
                &EvalEcho {
                    manifest: &manifest,
                    methods: &methods,
                    rho,
                    seed: common.seed,
                },
            )?;
            if check_ordering {
                let mean = |name: &str| {
                    let v: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.method == name)
                        .map(|r| r.rmse)
                        .collect();
                    v.iter().sum::<f64>() / v.len().max(1) as f64
                };
                let (atgv, bilinear) = (mean("atgv_net"), mean("bilinear"));
                if !(atgv <= bilinear) {
                    return Err(Error::Config(format!(
                        "ordering violated: atgv_net RMSE {atgv} > bilinear RMSE {bilinear}"
                    )));
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
