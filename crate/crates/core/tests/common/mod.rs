//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use ordinal_noise::numcore::SeededRng;

/// One-vs-rest AUC by explicit pair counting, macro-averaged over classes
/// with at least one positive and one negative.
pub fn pair_counting_auc(probs: &[Vec<f64>], targets: &[usize], classes: usize) -> Option<f64> {
    let mut aucs = Vec::new();
    for k in 0..classes {
        let pos: Vec<f64> = (0..targets.len()).filter(|&i| targets[i] == k).map(|i| probs[i][k]).collect();
        let neg: Vec<f64> = (0..targets.len()).filter(|&i| targets[i] != k).map(|i| probs[i][k]).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut wins = 0.0;
        for &a in &pos {
            for &b in &neg {
                wins += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        aucs.push(wins / (pos.len() * neg.len()) as f64);
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Macro F1 from per-class tp/fp/fn tallied in a single pass.
pub fn counting_f1(preds: &[usize], targets: &[usize], classes: usize) -> f64 {
    let mut tp = vec![0u64; classes];
    let mut fp = vec![0u64; classes];
    let mut fn_ = vec![0u64; classes];
    for (&p, &t) in preds.iter().zip(targets) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut total = 0.0;
    for k in 0..classes {
        let denom = 2 * tp[k] + fp[k] + fn_[k];
        if denom > 0 {
            total += (2 * tp[k]) as f64 / denom as f64;
        }
    }
    total / classes as f64
}

/// Class means by grouping on the first maximal probability.
pub fn group_by_centroids(features: &[Vec<f64>], probs: &[Vec<f64>]) -> Vec<Option<Vec<f64>>> {
    let classes = probs[0].len();
    (0..classes)
        .map(|k| {
            let members: Vec<&Vec<f64>> = features
                .iter()
                .zip(probs)
                .filter(|(_, p)| {
                    let best = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    p.iter().position(|&v| v == best) == Some(k)
                })
                .map(|(z, _)| z)
                .collect();
            if members.is_empty() {
                return None;
            }
            let dim = members[0].len();
            Some(
                (0..dim)
                    .map(|j| members.iter().map(|z| z[j]).sum::<f64>() / members.len() as f64)
                    .collect(),
            )
        })
        .collect()
}

pub fn random_probs(rng: &mut SeededRng, classes: usize, coarse: bool) -> Vec<f64> {
    // coarse scores produce many exact ties
    let w: Vec<f64> = (0..classes)
        .map(|_| if coarse { (rng.below(4) + 1) as f64 } else { rng.uniform() + 1e-3 })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}
