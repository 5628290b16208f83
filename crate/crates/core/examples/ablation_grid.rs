//! Single-view and multi-view runs of the full method, without the unimodal
//! term, without unimodal and memory terms, and the plain baseline.
//!
//! `cargo run --release --example ablation_grid`

use ordinal_noise::config::ExperimentConfig;
use ordinal_noise::pipeline::{ablation_csv, ablation_grid};

fn main() -> ordinal_noise::Result<()> {
    let rows = ablation_grid(&ExperimentConfig::benchmark())?;
    println!("{:<4} {:<10} {:>9} {:>9} {:>10}", "view", "variant", "acc", "f1", "unimodal");
    for line in ablation_csv(&rows).iter().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().unwrap();
        println!("{:<4} {:<10} {:>9.4} {:>9.4} {:>10.3}", f[0], f[1], num(3), num(5), num(7));
    }
    Ok(())
}
