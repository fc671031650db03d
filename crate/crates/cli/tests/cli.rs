mod common;

use std::path::Path;
use std::process::{Command, Output};

use image::{GrayImage, Luma, Rgb, RgbImage};

fn adenoseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adenoseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(path: &Path, cfg: &adenoseg::RunConfig) {
    std::fs::write(path, cfg.echo().unwrap()).unwrap();
}

fn default_config() -> String {
    format!("{}/../../configs/default.toml", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn default_config_echo_and_missing_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = dir.path().join("no_such_dataset");
    let o = adenoseg(&[
        "train",
        "--config",
        &default_config(),
        "--output",
        out.to_str().unwrap(),
        &format!("--data.root={}", missing.display()),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no_such_dataset"), "{}", stderr(&o));
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    let cfg: adenoseg::RunConfig = adenoseg::RunConfig::from_toml_str(&echo, &[]).unwrap();
    assert_eq!(cfg.train.learning_rate, 0.0001);
    assert_eq!(cfg.train.batch_size, 32);
    assert_eq!(cfg.train.epochs, 500);
    assert!(echo.contains("learning_rate = 0.0001"), "{echo}");
}

#[test]
fn epochs_override_and_echo_closure() {
    let dir = tempfile::tempdir().unwrap();
    let root = common::write_rectangle_dataset(&dir.path().join("rects"), 32);
    let cfg = common::tiny_run(&root, &dir.path().join("first"), 32, 5);
    let cfg_path = dir.path().join("tiny.toml");
    write_config(&cfg_path, &cfg);
    let o = adenoseg(&["train", "--config", cfg_path.to_str().unwrap(), "--train.epochs=2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("first/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");

    // re-running from the echoed config reproduces the run
    let echo = dir.path().join("first/config.toml");
    let o = adenoseg(&[
        "train",
        "--config",
        echo.to_str().unwrap(),
        "--output",
        dir.path().join("second").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(dir.path().join("first/last.ckpt")).unwrap();
    let b = std::fs::read(dir.path().join("second/last.ckpt")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn predict_writes_outputs_and_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let root = common::write_rectangle_dataset(&dir.path().join("rects"), 32);
    let cfg = common::tiny_run(&root, &dir.path().join("train"), 32, 1);
    let cfg_path = dir.path().join("tiny.toml");
    write_config(&cfg_path, &cfg);
    assert!(adenoseg(&["train", "--config", cfg_path.to_str().unwrap()]).status.success());
    let ckpt = dir.path().join("train/last.ckpt");

    let inputs = dir.path().join("inputs");
    std::fs::create_dir_all(&inputs).unwrap();
    for (i, size) in [(0, 40u32), (1, 50), (2, 33)] {
        RgbImage::from_fn(size, size + 3, |x, y| Rgb([(x * 5) as u8, (y * 3) as u8, 90]))
            .save(inputs.join(format!("roi{i}.png")))
            .unwrap();
    }
    let run = |out: &str| {
        adenoseg(&[
            "predict",
            "--config",
            cfg_path.to_str().unwrap(),
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--input",
            inputs.to_str().unwrap(),
            "--output",
            dir.path().join(out).to_str().unwrap(),
        ])
    };
    let o = run("pred1");
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(dir.path().join("pred1")).unwrap().count(), 6);
    let mask = image::open(dir.path().join("pred1/roi1_mask.png")).unwrap().to_luma8();
    assert_eq!(mask.dimensions(), (50, 53));
    assert!(mask.as_raw().iter().all(|&v| v == 0 || v == 255));

    let o = run("pred2");
    assert!(o.status.success());
    for i in 0..3 {
        let name = format!("roi{i}_mask.png");
        assert_eq!(
            std::fs::read(dir.path().join("pred1").join(&name)).unwrap(),
            std::fs::read(dir.path().join("pred2").join(&name)).unwrap()
        );
    }

    std::fs::write(inputs.join("roi1.png"), b"garbage").unwrap();
    let o = run("pred3");
    assert!(!o.status.success());
    assert!(stderr(&o).contains("roi1.png"), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(dir.path().join("pred3")).unwrap().count(), 4);
}

/// Masks used as "images", so the identity stub predicts them exactly.
fn write_eval_dataset(root: &Path) {
    std::fs::create_dir_all(root.join("image")).unwrap();
    std::fs::create_dir_all(root.join("mask")).unwrap();
    let strip = |lo: u32, hi: u32| GrayImage::from_fn(16, 1, move |x, _| Luma([if x >= lo && x < hi { 255 } else { 0 }]));
    // dice 1, 0.5 (|A| = |B| = 8, overlap 4) and 0
    for (name, pred, truth) in [("a", (0, 8), (0, 8)), ("b", (0, 8), (4, 12)), ("c", (0, 8), (8, 16))] {
        strip(pred.0, pred.1).save(root.join("image").join(format!("{name}.png"))).unwrap();
        strip(truth.0, truth.1).save(root.join("mask").join(format!("{name}.png"))).unwrap();
    }
}

#[test]
fn evaluate_with_stubs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("eval");
    write_eval_dataset(&data);
    let out = dir.path().join("out");
    let o = adenoseg(&[
        "evaluate",
        "--dataset",
        data.to_str().unwrap(),
        "--stub",
        "identity",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("mean\tdice 0.5000"), "{stdout}");
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(csv.contains("a,1.000000,1.000000"), "{csv}");
    assert!(csv.contains("b,0.500000,0.333333"), "{csv}");
    assert!(csv.contains("c,0.000000,0.000000"), "{csv}");

    // identity on the ground truth itself
    let same = dir.path().join("same");
    std::fs::create_dir_all(same.join("image")).unwrap();
    std::fs::create_dir_all(same.join("mask")).unwrap();
    for name in ["a", "b", "c"] {
        let m = data.join("mask").join(format!("{name}.png"));
        std::fs::copy(&m, same.join("image").join(format!("{name}.png"))).unwrap();
        std::fs::copy(&m, same.join("mask").join(format!("{name}.png"))).unwrap();
    }
    let o = adenoseg(&["evaluate", "--dataset", same.to_str().unwrap(), "--stub", "identity", "--output", out.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean\tdice 1.0000"));
    let o = adenoseg(&["evaluate", "--dataset", same.to_str().unwrap(), "--stub", "background", "--output", out.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("mean\tdice 0.0000"));
}

#[test]
fn error_paths_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!adenoseg(&["frobnicate"]).status.success());
    assert!(!adenoseg(&["evaluate", "--dataset", dir.path().to_str().unwrap()]).status.success());
    let o = adenoseg(&["train", "--train.learning_rate=-1", "--output", dir.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
    let o = adenoseg(&["train", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("absent.toml"));
    assert!(adenoseg(&["--help"]).status.success());
}
