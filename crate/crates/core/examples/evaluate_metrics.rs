//! Metrics on a toy prediction set: accuracy, macro-F1, one-vs-rest AUC and
//! the 5-to-3 grade grouping.
//!
//! `cargo run --example evaluate_metrics`

use ordinal_noise::metrics::{accuracy, confusion_matrix, macro_auc, macro_f1, map_3class, map_probs_3class};
use ordinal_noise::numcore::argmax_tiebreak;

fn main() -> ordinal_noise::Result<()> {
    let probs = vec![
        vec![0.70, 0.20, 0.05, 0.03, 0.02],
        vec![0.10, 0.60, 0.20, 0.05, 0.05],
        vec![0.05, 0.25, 0.40, 0.20, 0.10],
        vec![0.02, 0.08, 0.30, 0.45, 0.15],
        vec![0.01, 0.04, 0.15, 0.30, 0.50],
        vec![0.05, 0.40, 0.35, 0.15, 0.05],
    ];
    let targets = [0, 1, 2, 3, 4, 2];
    let preds: Vec<usize> = probs.iter().map(|p| argmax_tiebreak(p)).collect::<Result<_, _>>()?;
    println!("5-class: accuracy {:.3}  macro-F1 {:.3}  AUC {:.3}", accuracy(&preds, &targets)?, macro_f1(&preds, &targets, 5)?, macro_auc(&probs, &targets, 5)?.value);
    println!("confusion (rows = targets): {:?}", confusion_matrix(&preds, &targets, 5)?);

    let probs3: Vec<Vec<f64>> = probs.iter().map(|p| map_probs_3class(p)).collect::<Result<_, _>>()?;
    let targets3: Vec<usize> = targets.iter().map(|&t| map_3class(t)).collect::<Result<_, _>>()?;
    let preds3: Vec<usize> = probs3.iter().map(|p| argmax_tiebreak(p)).collect::<Result<_, _>>()?;
    println!("3-class: accuracy {:.3}  macro-F1 {:.3}  AUC {:.3}", accuracy(&preds3, &targets3)?, macro_f1(&preds3, &targets3, 3)?, macro_auc(&probs3, &targets3, 3)?.value);
    Ok(())
}
