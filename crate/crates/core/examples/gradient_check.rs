//! Runs the finite-difference gradient suite over every loss and the full
//! model, the same check behind `ordinal-noise gradcheck`.
//!
//! `cargo run --example gradient_check`

use ordinal_noise::gradcheck::{run_suite, GradcheckOptions};

fn main() -> ordinal_noise::Result<()> {
    let report = run_suite(&GradcheckOptions::default())?;
    for c in &report.checks {
        println!("{:<20} {:>4} instances  max rel err {:.2e}", c.name, c.instances, c.max_relative_error);
    }
    println!("all passed: {} in {:.3}s", report.passed(), report.elapsed_secs);
    Ok(())
}
