//! Compares URL against the cross-entropy baselines (AVE, LS, CE-MV, CE-SV)
//! over the three benchmark seeds.
//!
//! `cargo run --release --example baselines`

use ordinal_noise::config::ExperimentConfig;
use ordinal_noise::pipeline::run_experiment;

fn main() -> ordinal_noise::Result<()> {
    for method in ["URL", "AVE", "LS", "CE-MV", "CE-SV"] {
        let mut cfg = ExperimentConfig::benchmark();
        cfg.method = method.parse()?;
        let report = run_experiment(&cfg)?.report;
        let t = report.task("5-class").expect("5-class task");
        println!(
            "{method:<6} accuracy {:.4} ± {:.4}  macro-F1 {:.4}  AUC {:.4}",
            t.accuracy.mean, t.accuracy.std, t.macro_f1.mean, t.macro_auc.mean
        );
    }
    Ok(())
}
