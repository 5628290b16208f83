//! Classification metrics for the 5-grade and the derived 3-group tasks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy(predictions: &[usize], targets: &[usize]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn check_classes(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(Error::invalid(format!("class {} outside 1..={classes}", l + 1))),
        None => Ok(()),
    }
}

/// `classes × classes` counts, rows indexed by target.
pub fn confusion_matrix(predictions: &[usize], targets: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != targets.len() {
        return Err(Error::invalid("prediction and target counts differ"));
    }
    check_classes(predictions, classes)?;
    check_classes(targets, classes)?;
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predictions.iter().zip(targets) {
        m[t][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1; a class absent from both predictions and
/// targets scores 0 and still counts toward the mean.
pub fn macro_f1(predictions: &[usize], targets: &[usize], classes: usize) -> Result<f64> {
    let m = confusion_matrix(predictions, targets, classes)?;
    let mut total = 0.0;
    for k in 0..classes {
        let tp = m[k][k];
        let fp: u64 = (0..classes).filter(|&t| t != k).map(|t| m[t][k]).sum();
        let fn_: u64 = (0..classes).filter(|&p| p != k).map(|p| m[k][p]).sum();
        // 2PR/(P+R) written in counts; 0 when the class never occurs
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total += (2 * tp) as f64 / denom as f64;
        }
    }
    Ok(total / classes as f64)
}

/// Binary AUC from the Mann-Whitney rank statistic (tied scores get mid-ranks).
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucResult {
    pub value: f64,
    /// 0-based classes left out because the targets have no positives (or no negatives).
    pub skipped: Vec<usize>,
}

/// Macro one-vs-rest AUC over the classes present in `targets`.
pub fn macro_auc(probabilities: &[Vec<f64>], targets: &[usize], classes: usize) -> Result<AucResult> {
    if probabilities.len() != targets.len() || targets.is_empty() {
        return Err(Error::invalid("need one probability vector per target"));
    }
    if probabilities.iter().any(|p| p.len() != classes) {
        return Err(Error::invalid(format!("probability vectors must have {classes} entries")));
    }
    check_classes(targets, classes)?;
    let mut aucs = Vec::new();
    let mut skipped = Vec::new();
    for k in 0..classes {
        let scores: Vec<f64> = probabilities.iter().map(|p| p[k]).collect();
        let positive: Vec<bool> = targets.iter().map(|&t| t == k).collect();
        match binary_auc(&scores, &positive) {
            Some(a) => aucs.push(a),
            None => skipped.push(k),
        }
    }
    if aucs.is_empty() {
        return Err(Error::degenerate("no class has both positive and negative targets"));
    }
    Ok(AucResult {
        value: aucs.iter().sum::<f64>() / aucs.len() as f64,
        skipped,
    })
}

pub const THREE_CLASS_NAMES: [&str; 3] = ["benign", "unsure", "malignant"];

/// Grades {1,2} → benign, {3} → unsure, {4,5} → malignant (0-based in and out).
pub fn map_3class(label5: usize) -> Result<usize> {
    match label5 {
        0 | 1 => Ok(0),
        2 => Ok(1),
        3 | 4 => Ok(2),
        _ => Err(Error::invalid(format!("grade {} outside 1..=5", label5 + 1))),
    }
}

pub fn map_probs_3class(p5: &[f64]) -> Result<Vec<f64>> {
    if p5.len() != 5 {
        return Err(Error::invalid("3-group mapping needs a 5-grade probability vector"));
    }
    Ok(vec![p5[0] + p5[1], p5[2], p5[3] + p5[4]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::SeededRng;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 0], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 1, 2, 0]).unwrap(), 0.75);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2, 3, 4], &[0, 1, 2, 3, 4], 5).unwrap(), 1.0);
        // grade 5 absent from both sides, the rest perfect
        assert!((macro_f1(&[0, 1, 2, 3, 3], &[0, 1, 2, 3, 3], 5).unwrap() - 0.8).abs() < 1e-15);
        assert!(macro_f1(&[5], &[0], 5).is_err());
    }

    #[test]
    fn auc_examples() {
        let probs = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.3, 0.7], vec![0.1, 0.9]];
        assert_eq!(macro_auc(&probs, &[0, 0, 1, 1], 2).unwrap().value, 1.0);
        let flat = vec![vec![0.5, 0.5]; 4];
        assert_eq!(macro_auc(&flat, &[0, 1, 0, 1], 2).unwrap().value, 0.5);
        let r = macro_auc(&vec![vec![0.2, 0.3, 0.5]; 4], &[0, 1, 0, 1], 3).unwrap();
        assert_eq!(r.skipped, vec![2]);
    }

    #[test]
    fn three_class_mapping() {
        assert_eq!(map_3class(0).unwrap(), 0);
        assert_eq!(map_3class(2).unwrap(), 1);
        assert_eq!(map_3class(4).unwrap(), 2);
        assert!(map_3class(5).is_err());
        let p3 = map_probs_3class(&[0.1, 0.2, 0.3, 0.2, 0.2]).unwrap();
        for (a, b) in p3.iter().zip([0.3, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn confusion_rows_sum_to_class_counts() {
        let m = confusion_matrix(&[0, 1, 1, 2], &[0, 0, 1, 2], 3).unwrap();
        assert_eq!(m[0].iter().sum::<u64>(), 2);
        assert_eq!(m[0][1], 1);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let mut rng = SeededRng::new(3, 3);
        let preds: Vec<usize> = (0..100).map(|_| rng.below(5)).collect();
        let targets: Vec<usize> = (0..100).map(|_| rng.below(5)).collect();
        let mut idx: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut idx);
        let p2: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
        let t2: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
        assert_eq!(accuracy(&preds, &targets).unwrap(), accuracy(&p2, &t2).unwrap());
        assert!((macro_f1(&preds, &targets, 5).unwrap() - macro_f1(&p2, &t2, 5).unwrap()).abs() < 1e-15);
    }
}
