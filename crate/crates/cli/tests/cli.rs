//! End-to-end tests of the binary's subcommands and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sparseview"))
}

fn tiny_config_json() -> String {
    serde_json::json!({
        "image_size": 32,
        "full_views": 96,
        "ladder": [12, 24],
        "train_views": [12, 24],
        "train_phantoms": 2,
        "test_phantoms": 1,
        "homology_phantoms": 8,
        "seed": 11,
        "net": {
            "stages": 2,
            "base_channels": 2,
            "multi_scale": true,
            "mode": "residual"
        },
        "train": {
            "epochs": 1,
            "lr_start": 0.01,
            "lr_end": 0.001,
            "weight_decay": 0.00001,
            "patch_size": 16,
            "batch_size": 2,
            "batches_per_epoch": 2,
            "val_peak": 1.0,
            "seed": 7
        },
        "tv": {
            "lambda_tv": 0.01,
            "iterations": 4,
            "smoothing_eps": 0.01,
            "power_iterations": 5
        },
        "tv_lambda_grid": [0.01],
        "betti_grid_samples": 9
    })
    .to_string()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, tiny_config_json()).unwrap();
    cfg
}

#[test]
fn full_workflow_over_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    let out = tmp.path().join("out");

    let status = bin()
        .args(["dataset", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("dataset/manifest.json").exists());

    let status = bin()
        .args(["train", "--mode", "residual", "--scale", "multi", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("models/residual_multi.ckpt").exists());

    let status = bin()
        .args(["eval", "--deterministic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("eval/metrics.csv").exists());
    assert!(out.join("eval/averages.csv").exists());
    assert!(out.join("eval/table.md").exists());
    assert!(!out.join("eval/timings.csv").exists());

    let status = bin()
        .args(["homology", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("homology/verdict.json").exists());
    assert!(out.join("homology/betti.csv").exists());
    let barcodes = std::fs::read_to_string(out.join("homology/barcodes_full.csv")).unwrap();
    assert!(barcodes.starts_with("dimension,birth,death\n"));
    assert!(barcodes.contains(",inf"));

    // single-shot tools over stored artifacts
    let phantom_bin = tmp.path().join("phantom.bin");
    let phantom_pgm = tmp.path().join("phantom.pgm");
    let status = bin()
        .args(["phantom", "--config"])
        .arg(&cfg)
        .arg("--output")
        .arg(&phantom_bin)
        .arg("--pgm")
        .arg(&phantom_pgm)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(phantom_bin.exists());
    assert!(tmp.path().join("phantom.bin.json").exists());
    assert!(phantom_pgm.exists());

    let sino = out.join("dataset/test/ph002/full_sino.bin");
    assert!(sino.exists());
    let fbp_out = tmp.path().join("fbp12.bin");
    let status = bin()
        .args(["fbp", "--size", "32", "--views", "12", "--input"])
        .arg(&sino)
        .arg("--output")
        .arg(&fbp_out)
        .status()
        .unwrap();
    assert!(status.success());

    let tv_out = tmp.path().join("tv12.bin");
    let status = bin()
        .args(["tv", "--size", "32", "--iterations", "3", "--input"])
        .arg(&sino)
        .arg("--output")
        .arg(&tv_out)
        .arg("--reference")
        .arg(out.join("dataset/test/ph002/full.bin"))
        .status()
        .unwrap();
    assert!(status.success());
    let trace = std::fs::read_to_string(tmp.path().join("tv12.trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective,psnr_db\n"));
    assert_eq!(trace.lines().count(), 1 + 4); // header + initial + 3 iterations

    let restored = tmp.path().join("restored.bin");
    let status = bin()
        .args(["infer", "--checkpoint"])
        .arg(out.join("models/residual_multi.ckpt"))
        .arg("--input")
        .arg(out.join("dataset/test/ph002/v0012/sparse.bin"))
        .arg("--output")
        .arg(&restored)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(restored.exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    // ladder entry that does not divide the full view count
    let cfg = tmp.path().join("bad.json");
    let mut text = tiny_config_json();
    text = text.replace("[12,24]", "[13,24]");
    std::fs::write(&cfg, text).unwrap();
    let status = bin()
        .args(["dataset", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // evaluating with no dataset on disk is an artifact error
    let good = setup(tmp.path());
    let status = bin()
        .args(["eval", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(tmp.path().join("empty"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn seed_override_changes_the_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = setup(tmp.path());
    for (dir, seed) in [("a", "11"), ("b", "12")] {
        let status = bin()
            .args(["dataset", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(dir))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(tmp.path().join("a/dataset/train/ph000/full.bin")).unwrap();
    let b = std::fs::read(tmp.path().join("b/dataset/train/ph000/full.bin")).unwrap();
    assert_ne!(a, b);
}
