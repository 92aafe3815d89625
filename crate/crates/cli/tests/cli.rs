//! End-to-end checks of the command-line surface, run against the built
//! binary. Kept small: heavy numerical behavior is covered in the core
//! crate; here we exercise wiring, exit codes, and replayability.

use std::path::Path;
use std::process::{Command, Output};

fn depthsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthsr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = depthsr(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn generate(dir: &Path, count: usize, seed: u64) {
    ok(&[
        "generate",
        "--out",
        dir.to_str().unwrap(),
        "--count",
        &count.to_string(),
        "--size",
        "16",
        "--seed",
        &seed.to_string(),
    ]);
}

#[test]
fn prints_baked_in_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&[
        "generate",
        "--out",
        dir.path().to_str().unwrap(),
        "--count",
        "0",
    ]);
    for needle in [
        "lr=0.001",
        "momentum=0.9",
        "iters=10",
        "alpha1=17",
        "alpha0=1.2",
        "beta=9",
        "gamma=0.85",
        "w_lambda=0.01",
    ] {
        assert!(stdout.contains(needle), "missing {needle} in:\n{stdout}");
    }
}

#[test]
fn generate_replay_reproduces_checksums() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path(), 2, 7);
    ok(&[
        "generate",
        "--out",
        b.path().to_str().unwrap(),
        "--replay",
        a.path().join("manifest.json").to_str().unwrap(),
    ]);
    let read = |d: &Path| std::fs::read_to_string(d.join("manifest.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn unknown_method_and_precision_fail() {
    let out = depthsr(&[
        "upsample",
        "--input",
        "x.pfm",
        "--output",
        "y.pfm",
        "--method",
        "magic",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method"));

    let out = depthsr(&[
        "generate",
        "--out",
        "/tmp/nope",
        "--count",
        "0",
        "--precision",
        "f32",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("64-bit"));
}

#[test]
fn joint_stage_requires_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 1, 1);
    let out = depthsr(&[
        "train",
        "--manifest",
        dir.path().join("manifest.json").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
        "--stage",
        "joint",
        "--epochs",
        "1",
        "--patch-size",
        "16",
    ]);
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("pretrain checkpoint required"),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), 2, 3);
    let manifest = dir.path().join("manifest.json");
    let run = dir.path().join("run");

    // tiny pretrain + joint
    ok(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
        "--patch-size",
        "16",
        "--batch-size",
        "2",
        "--depth",
        "3",
        "--features",
        "4",
    ]);
    let pre = run.join("pretrain.ckpt");
    assert!(pre.exists());
    assert!(run.join("train-config.json").exists());
    assert!(run.join("pretrain-loss.txt").exists());
    ok(&[
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
        "--stage",
        "joint",
        "--from",
        pre.to_str().unwrap(),
        "--epochs",
        "1",
        "--patch-size",
        "16",
        "--batch-size",
        "2",
        "--iters",
        "2",
    ]);
    let joint = run.join("joint.ckpt");
    assert!(joint.exists());

    // upsample: solver with zero iterations equals cnn-only bitwise
    let lowres = dir.path().join("lowres_00000.pfm");
    let out_a = dir.path().join("a.pfm");
    let out_b = dir.path().join("b.pfm");
    ok(&[
        "upsample",
        "--input",
        lowres.to_str().unwrap(),
        "--output",
        out_a.to_str().unwrap(),
        "--method",
        "cnn-only",
        "--checkpoint",
        joint.to_str().unwrap(),
    ]);
    ok(&[
        "upsample",
        "--input",
        lowres.to_str().unwrap(),
        "--output",
        out_b.to_str().unwrap(),
        "--method",
        "atgv-net",
        "--checkpoint",
        joint.to_str().unwrap(),
        "--iters",
        "0",
        "--dump-energy",
        dir.path().join("energy.txt").to_str().unwrap(),
    ]);
    assert_eq!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_b).unwrap()
    );
    let energy = std::fs::read_to_string(dir.path().join("energy.txt")).unwrap();
    assert!(!energy.trim().is_empty());

    // eval CSV schema
    let csv_path = dir.path().join("results.csv");
    ok(&[
        "eval",
        "--manifest",
        manifest.to_str().unwrap(),
        "--methods",
        "bilinear,bicubic,atgv_net",
        "--checkpoint",
        joint.to_str().unwrap(),
        "--csv",
        csv_path.to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("method,sample,rho,rmse,mae\n"));
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}
