//! Full URL run on the benchmark for one seed, with the per-stage loss trace
//! and the test metrics.
//!
//! `cargo run --release --example train_url`

use ordinal_noise::config::ExperimentConfig;
use ordinal_noise::pipeline::run_seed;

fn main() -> ordinal_noise::Result<()> {
    let cfg = ExperimentConfig::benchmark();
    let run = run_seed(&cfg, 1)?;
    for stage in &run.train_report.stages {
        let last = stage.epochs.last();
        println!(
            "{:?}: {} epochs, final total loss {:.4}",
            stage.stage,
            stage.epochs.len(),
            last.map_or(f64::NAN, |e| e.total)
        );
    }
    if let Some(mu) = run.train_report.stages.last().and_then(|s| s.epochs.last()) {
        println!("last epoch terms: ce {:.4}  reg {:.4}  uni {:.5}", mu.ce, mu.reg, mu.uni);
    }
    for t in &run.metrics.tasks {
        println!("{}: accuracy {:.4}  macro-F1 {:.4}  AUC {:.4}", t.task, t.accuracy, t.macro_f1, t.macro_auc);
    }
    println!("unimodal test predictions: {:.3}", run.metrics.unimodal_fraction);
    println!("trained in {:.2}s", run.train_report.wall_clock_secs);
    Ok(())
}
