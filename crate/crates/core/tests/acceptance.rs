//! The nine acceptance criteria. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! Runs without the libtest harness so the verdicts always reach stdout:
//! `cargo test -p ordinal-noise --test acceptance`.

mod common;

use std::time::Instant;

use ordinal_noise::cli::cli_main;
use ordinal_noise::config::ExperimentConfig;
use ordinal_noise::data::ViewMode;
use ordinal_noise::gradcheck::{run_suite, GradcheckOptions};
use ordinal_noise::losses::{batch_centroids, MemoryBank};
use ordinal_noise::metrics::{macro_auc, macro_f1};
use ordinal_noise::numcore::SeededRng;
use ordinal_noise::pipeline::{run_seed, AblationVariant};
use ordinal_noise::report::{MetricsReport, RunMetrics};

struct Verdict {
    id: usize,
    passed: bool,
    detail: String,
}

fn verdict(id: usize, passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        id,
        passed,
        detail: detail.into(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn acc5(r: &RunMetrics) -> f64 {
    r.tasks.iter().find(|t| t.task == "5-class").unwrap().accuracy
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn gradient_suite() -> Verdict {
    let report = run_suite(&GradcheckOptions::default()).unwrap();
    let worst = report.checks.iter().map(|c| c.max_relative_error).fold(0.0, f64::max);
    let enough = report.checks.iter().filter(|c| !c.name.starts_with("model/")).all(|c| c.instances >= 100);
    verdict(
        1,
        report.passed() && enough && report.elapsed_secs < 10.0,
        format!(
            "{} checks, worst rel. error {worst:.2e} (< 1e-4), {:.2}s (< 10s)",
            report.checks.len(),
            report.elapsed_secs
        ),
    )
}

fn closed_form_ema() -> Verdict {
    let q = [0.1, 0.2, 0.3, 0.25, 0.15];
    let mut bank = MemoryBank::new(5, 0.9).unwrap();
    let mut worst: f64 = 0.0;
    for t in 1..=50 {
        bank.update(7, &q).unwrap();
        if [1, 10, 50].contains(&t) {
            let expect = 1.0 - 0.9f64.powi(t);
            for (m, qk) in bank.get(7).iter().zip(q) {
                worst = worst.max((m - expect * qk).abs());
            }
        }
    }
    verdict(2, worst <= 1e-12, format!("max |memory − (1−β^t)q| = {worst:.1e} at t ∈ {{1,10,50}}"))
}

fn oracle_equivalence() -> Verdict {
    let mut rng = SeededRng::new(2024, 0);
    let (mut auc_err, mut f1_mismatch, mut cen_err): (f64, usize, f64) = (0.0, 0, 0.0);
    for i in 0..200 {
        let classes = 2 + rng.below(5);
        let n = 5 + rng.below(60);
        let coarse = i % 2 == 0;
        let probs: Vec<Vec<f64>> = (0..n).map(|_| common::random_probs(&mut rng, classes, coarse)).collect();
        let targets: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        match (macro_auc(&probs, &targets, classes), common::pair_counting_auc(&probs, &targets, classes)) {
            (Ok(a), Some(b)) => auc_err = auc_err.max((a.value - b).abs()),
            (Err(_), None) => {}
            _ => auc_err = f64::INFINITY,
        }
        if macro_f1(&preds, &targets, classes).unwrap() != common::counting_f1(&preds, &targets, classes) {
            f1_mismatch += 1;
        }
        let dim = 1 + rng.below(8);
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
        let got = batch_centroids(&feats, &probs).unwrap();
        for (k, want) in common::group_by_centroids(&feats, &probs).iter().enumerate() {
            match (got.get(k), want) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.iter().zip(b) {
                        cen_err = cen_err.max((x - y).abs());
                    }
                }
                (None, None) => {}
                _ => cen_err = f64::INFINITY,
            }
        }
    }
    verdict(
        7,
        auc_err <= 1e-12 && f1_mismatch == 0 && cen_err <= 1e-12,
        format!("200 instances: AUC max err {auc_err:.1e}, F1 mismatches {f1_mismatch}, centroid max err {cen_err:.1e}"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/benchmark.json");
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let code = cli_main(["ordinal-noise", "train", "--config", config, "--seed", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(code, 0);
        bytes.push(std::fs::read(out.join("report.json")).unwrap());
    }
    verdict(8, bytes[0] == bytes[1], format!("two `train` invocations, report.json {} bytes each, identical: {}", bytes[0].len(), bytes[0] == bytes[1]))
}

/// Runs one grid cell seed by seed on the calling thread.
fn sequential(cfg: &ExperimentConfig) -> MetricsReport {
    let runs = cfg.seeds.iter().map(|&s| run_seed(cfg, s).unwrap().metrics).collect();
    MetricsReport::from_runs(cfg, runs)
}

fn main() {
    let mut verdicts = vec![gradient_suite(), closed_form_ema(), oracle_equivalence(), determinism()];

    let bench = ExperimentConfig::benchmark();

    let start = Instant::now();
    let single = run_seed(&bench, bench.seeds[0]).unwrap();
    let single_secs = start.elapsed().as_secs_f64();
    let stages: Vec<usize> = single.train_report.stages.iter().map(|s| s.epochs.len()).collect();

    let start = Instant::now();
    let mut grid = Vec::new();
    for view in [ViewMode::Single, ViewMode::Multi] {
        for variant in AblationVariant::ALL {
            grid.push((view, variant, sequential(&variant.apply(&bench, view))));
        }
    }
    let grid_secs = start.elapsed().as_secs_f64();
    let cell = |view, variant| &grid.iter().find(|(v, w, _)| *v == view && *w == variant).unwrap().2;

    let full = cell(ViewMode::Multi, AblationVariant::Full);
    let no_uni = cell(ViewMode::Multi, AblationVariant::NoUni);
    let mv = cell(ViewMode::Multi, AblationVariant::Baseline);
    let sv = cell(ViewMode::Single, AblationVariant::Baseline);

    let uni_full: Vec<f64> = full.runs.iter().map(|r| r.unimodal_fraction).collect();
    let uni_off: Vec<f64> = no_uni.runs.iter().map(|r| r.unimodal_fraction).collect();
    verdicts.push(verdict(
        3,
        mean(&uni_full) >= 0.95 && uni_off.iter().zip(&uni_full).all(|(a, b)| a < b),
        format!("unimodal fraction URL [{}] mean {:.4} (≥ 0.95); α2=0 [{}] (strictly lower every seed)", fmt(&uni_full), mean(&uni_full), fmt(&uni_off)),
    ));

    let mut ave_cfg = bench.clone();
    ave_cfg.method = "AVE".parse().unwrap();
    let ave = sequential(&ave_cfg);
    let url_acc: Vec<f64> = full.runs.iter().map(acc5).collect();
    let ave_acc: Vec<f64> = ave.runs.iter().map(acc5).collect();
    let gap = mean(&url_acc) - mean(&ave_acc);
    verdicts.push(verdict(
        4,
        gap >= 0.02,
        format!("5-class accuracy URL {:.4} vs AVE {:.4}, gap {:+.2} points (≥ 2)", mean(&url_acc), mean(&ave_acc), 100.0 * gap),
    ));

    let m = |r: &MetricsReport| mean(&r.runs.iter().map(acc5).collect::<Vec<_>>());
    verdicts.push(verdict(
        5,
        m(full) >= m(mv) && m(mv) >= m(sv),
        format!("3-seed means: URL {:.4} ≥ MV baseline {:.4} ≥ SV baseline {:.4}", m(full), m(mv), m(sv)),
    ));

    let margins: Vec<f64> = full
        .runs
        .iter()
        .map(|r| {
            let s = r.selection.as_ref().unwrap();
            s.purity.unwrap() - s.annotation_agreement.unwrap()
        })
        .collect();
    verdicts.push(verdict(
        6,
        margins.iter().all(|&g| g >= 0.10),
        format!("purity − agreement per seed [{}] (each ≥ 0.10)", fmt(&margins)),
    ));

    verdicts.push(verdict(
        9,
        single_secs < 120.0 && grid_secs < 1800.0 && stages[1..] == [10, 30],
        format!("one URL run {single_secs:.2}s (< 120s, stage epochs {stages:?}); 3-seed ablation grid {grid_secs:.1}s single-threaded (< 1800s)"),
    ));

    verdicts.sort_by_key(|v| v.id);
    for v in &verdicts {
        println!("criterion {}: {} {}", v.id, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", verdicts.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
