//! Command-line behavior, driven in-process through `cli_main` and once
//! through the built binary for exit codes.

use std::path::Path;
use std::process::Command;

use ordinal_noise::cli::cli_main;
use ordinal_noise::config::{DataSource, ExperimentConfig};
use ordinal_noise::report::read_report;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ordinal-noise"))
}

fn tiny_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::benchmark();
    if let DataSource::Synthetic { generator, n_test } = &mut cfg.data {
        generator.n_samples = 300;
        *n_test = 80;
    }
    cfg.hyper.nl_max_epochs = 3;
    cfg.hyper.scl_epochs = 2;
    cfg.hyper.mu_epochs = 2;
    cfg.seeds = vec![1, 2];
    let path = dir.join("tiny.json");
    cfg.write(&path).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = bin().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(cli_main(["ordinal-noise", "ablate", "--views", "2"]), 2);
}

#[test]
fn missing_config_names_the_path() {
    let out = bin().args(["train", "--config", "/no/such/missing.json"]).output().unwrap();
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/missing.json"));
}

#[test]
fn bad_method_and_reg_sign_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    assert_eq!(cli_main(["ordinal-noise", "train", "--config", &cfg, "--method", "XYZ"]), 1);
    assert_eq!(cli_main(["ordinal-noise", "train", "--config", &cfg, "--reg-sign", "sideways"]), 1);
}

#[test]
fn gradcheck_exits_zero() {
    let out = bin().args(["gradcheck", "--instances", "20"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}

#[test]
fn train_writes_report_checkpoints_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let args = ["ordinal-noise", "train", "--config", &cfg, "--out", out.to_str().unwrap(), "--no-uni", "--views", "1"];
    assert_eq!(cli_main(args), 0);
    let report = read_report(&out.join("report.json")).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert!(!report.ablation.unimodal && report.ablation.memory_reg);
    for seed in [1, 2] {
        assert!(out.join(format!("checkpoint_seed{seed}.json")).exists());
        assert!(out.join(format!("train_seed{seed}.json")).exists());
    }
    assert!(out.join("report.csv").exists());
}

#[test]
fn generate_then_evaluate_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    assert_eq!(cli_main(["ordinal-noise", "train", "--config", &cfg, "--seed", "1", "--out", run.to_str().unwrap()]), 0);
    let data = dir.path().join("data");
    assert_eq!(
        cli_main(["ordinal-noise", "generate", "--seed", "9", "--n-test", "50", "--out", data.to_str().unwrap()]),
        0
    );
    assert!(data.join("train.csv").exists());
    let eval = dir.path().join("eval");
    let ckpt = run.join("checkpoint_seed1.json");
    let test = data.join("test.csv");
    let args = ["ordinal-noise", "evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", test.to_str().unwrap(), "--out", eval.to_str().unwrap()];
    assert_eq!(cli_main(args), 0);
    let report = read_report(&eval.join("report.json")).unwrap();
    assert_eq!(report.runs[0].tasks.len(), 2);
    assert!(report.runs[0].tasks.iter().all(|t| (0.0..=1.0).contains(&t.accuracy)));
}

#[test]
fn ablate_emits_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("abl");
    assert_eq!(cli_main(["ordinal-noise", "ablate", "--config", &cfg, "--out", out.to_str().unwrap()]), 0);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| r.starts_with("SV,")).count(), 4);
    assert!(rows[3].starts_with("SV,baseline") && rows[7].starts_with("MV,baseline"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 8);
}
