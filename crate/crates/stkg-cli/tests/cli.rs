//! End-to-end runs of the compiled binary: synthetic data generation,
//! training, scoring, inference, diagnostics, and the reproducibility and
//! exit-code contracts.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stkg"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin()
        .args(args)
        .current_dir(dir)
        .env_remove("STKG_SEED")
        .output()
        .expect("spawn");
    assert!(
        out.status.success(),
        "stkg {:?} failed:\n{}\n{}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const DATA: [&str; 6] = [
    "--series",
    "data/series.csv",
    "--adjacency",
    "data/adjacency.csv",
    "--metadata",
    "data/metadata.csv",
];

const TINY_MODEL: [&str; 20] = [
    "--window",
    "12",
    "--hidden",
    "10",
    "--label-dim",
    "6",
    "--meta-dim",
    "8",
    "--digit-dim",
    "3",
    "--topk",
    "3",
    "--patch-len",
    "4",
    "--disc-hidden",
    "6",
    "--phase-bins",
    "16",
    "--trend-window",
    "3",
];

fn synth(dir: &Path, seed: &str) {
    run_ok(
        &["synth", "--n", "10", "--t", "120", "--seed", seed, "-o", "data", "--shift-max", "3"],
        dir,
    );
}

#[test]
fn no_command_and_unknown_flag_exit_2() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let help = String::from_utf8_lossy(&out.stderr);
    assert!(help.contains("Usage"), "{help}");

    let out = bin().args(["eval", "--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_exits_3_and_bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--series", "nope.csv", "--adjacency", "nope.csv"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    synth(tmp.path(), "0");
    let mut args = vec!["train"];
    args.extend_from_slice(&DATA);
    args.extend_from_slice(&["--split", "9:9:9"]);
    let out = bin().args(&args).current_dir(tmp.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_reproducible_and_seed_env_matches_flag() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "5");
    let out = bin()
        .args(["synth", "--n", "10", "--t", "120", "-o", "data", "--shift-max", "3"])
        .current_dir(b.path())
        .env("STKG_SEED", "5")
        .output()
        .unwrap();
    assert!(out.status.success());
    for f in ["series.csv", "adjacency.csv", "metadata.csv", "shifts.csv"] {
        let fa = std::fs::read(a.path().join("data").join(f)).unwrap();
        let fb = std::fs::read(b.path().join("data").join(f)).unwrap();
        assert_eq!(fa, fb, "{f} differs between --seed and STKG_SEED");
    }
}

#[test]
fn pipeline_smoke_train_eval_krige_diagnose() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "7");

    let mut train = vec!["--no-timestamps", "train"];
    train.extend_from_slice(&DATA);
    train.extend_from_slice(&TINY_MODEL);
    train.extend_from_slice(&[
        "--seed",
        "3",
        "--epochs",
        "3",
        "--rounds",
        "1",
        "--batch-size",
        "16",
        "--stride",
        "4",
        "-o",
        "run",
        "--save-epochs",
    ]);
    let out = run_ok(&train, dir);
    assert!(String::from_utf8_lossy(&out.stdout).contains("best epoch"));
    for f in ["model.stkg", "model-final.stkg", "history.csv", "epoch-003.stkg"] {
        assert!(dir.join("run").join(f).exists(), "{f} missing");
    }
    let history = std::fs::read_to_string(dir.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4, "header + 3 epochs:\n{history}");
    assert!(history.starts_with("epoch,loss_main,loss_d,val_mae,val_rmse,val_r2"));

    let mut eval = vec!["eval", "--checkpoint", "run/model.stkg"];
    eval.extend_from_slice(&DATA);
    eval.extend_from_slice(&["--seed", "3", "--scope", "test", "-o", "metrics.csv"]);
    let out = run_ok(&eval, dir);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("test") && stdout.contains("baseline"), "{stdout}");
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let mut krige = vec!["krige", "--checkpoint", "run/model.stkg"];
    krige.extend_from_slice(&DATA);
    krige.extend_from_slice(&["--seed", "3", "-o", "predictions.csv"]);
    run_ok(&krige, dir);
    let preds = std::fs::read_to_string(dir.join("predictions.csv")).unwrap();
    let mut lines = preds.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("timestamp,s000,"));
    assert_eq!(lines.count(), 36, "three 12-step windows");

    let mut diag = vec!["diagnose", "--checkpoints", "run"];
    diag.extend_from_slice(&DATA);
    diag.extend_from_slice(&["--seed", "3", "-o", "confusion.csv"]);
    run_ok(&diag, dir);
    let curve = std::fs::read_to_string(dir.join("confusion.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4, "header + one row per checkpoint");
    assert!(curve.starts_with("epoch,bce,divergence"));

    // Same argv, same seed: byte-identical training artifacts.
    let mut rerun = train.clone();
    let pos = rerun.iter().position(|w| *w == "run").unwrap();
    rerun[pos] = "run2";
    run_ok(&rerun, dir);
    assert_eq!(
        std::fs::read(dir.join("run/model.stkg")).unwrap(),
        std::fs::read(dir.join("run2/model.stkg")).unwrap(),
        "training is not reproducible"
    );
    assert_eq!(
        std::fs::read_to_string(dir.join("run/history.csv")).unwrap(),
        std::fs::read_to_string(dir.join("run2/history.csv")).unwrap()
    );
}

#[test]
fn config_file_overrides_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "1");
    std::fs::write(dir.join("cfg.toml"), "[train]\nepochs = 1\n").unwrap();
    let mut train = vec!["train"];
    train.extend_from_slice(&DATA);
    train.extend_from_slice(&TINY_MODEL);
    train.extend_from_slice(&[
        "--seed", "2", "--epochs", "4", "--rounds", "1", "--batch-size", "16", "--stride", "6",
        "--config", "cfg.toml", "-o", "run",
    ]);
    run_ok(&train, dir);
    let history = std::fs::read_to_string(dir.join("run/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2, "config epochs=1 must beat --epochs 4");
}

#[test]
fn ablated_training_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "9");
    let mut train = vec!["train"];
    train.extend_from_slice(&DATA);
    train.extend_from_slice(&TINY_MODEL);
    train.extend_from_slice(&[
        "--seed", "1", "--epochs", "1", "--rounds", "1", "--batch-size", "16", "--stride", "12",
        "--ablate", "S,T", "-o", "run",
    ]);
    run_ok(&train, dir);
    let out = bin()
        .args(["train", "--series", "data/series.csv", "--adjacency", "data/adjacency.csv", "--ablate", "bogus"])
        .current_dir(dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_command_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_ok(&["gradcheck", "--seeds", "2"], tmp.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all 2 seeds within"), "{stdout}");
}
