//! Trains the negative-learning backbone on the benchmark and selects the
//! low-entropy reliable set. Prints its per-class counts and how much cleaner
//! it is than the raw annotations.
//!
//! `cargo run --release --example reliable_selection`

use ordinal_noise::config::ExperimentConfig;
use ordinal_noise::pipeline::{prepare_data, select_reliable, train_nl_warmup};

fn main() -> ordinal_noise::Result<()> {
    let cfg = ExperimentConfig::benchmark();
    let seed = 1;
    let data = prepare_data(&cfg, seed)?;
    let nl = train_nl_warmup(&data, &cfg.hyper, seed)?;
    println!(
        "warm-up ran {} epochs, best validation accuracy {:.3} at epoch {:?}",
        nl.trace.epochs.len(),
        nl.best_accuracy,
        nl.trace.best_epoch
    );
    let set = select_reliable(&nl.best_model, &data.train, &data.train_x, cfg.hyper.reliable_size)?;
    let stats = set.stats(&data.train);
    println!("quota {} per class, counts {:?}, shortfall {:?}", stats.quota_per_class, stats.per_class_counts, stats.shortfall);
    println!(
        "purity {:.3} vs annotation agreement {:.3}",
        stats.purity.unwrap_or(f64::NAN),
        stats.annotation_agreement.unwrap_or(f64::NAN)
    );
    Ok(())
}
