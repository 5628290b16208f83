//! Training objectives and label-construction formulas.
//!
//! Every per-sample loss returns its value together with the gradient with
//! respect to the logits that produced `p = softmax(logits)`; the contrastive
//! loss returns gradients with respect to the raw (unnormalized) features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{
    argmax_tiebreak, axpy, check_probability, cosine_similarity, dot, l2_normalize, softmax,
    softmax_backward, PROB_TOL,
};

/// Lower clamp applied to every log argument.
pub const LOG_CLAMP: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad_logits: Vec<f64>,
}

impl LossTerm {
    pub fn zero(classes: usize) -> Self {
        LossTerm {
            value: 0.0,
            grad_logits: vec![0.0; classes],
        }
    }
}

pub fn one_hot(class: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[class] = 1.0;
    y
}

fn check_one_hot(y: &[f64]) -> Result<usize> {
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("{y:?} is not a one-hot vector")));
    }
    Ok(y.iter().position(|&v| v == 1.0).unwrap())
}

/// Negative learning on complementary labels: `−Σ_k (1 − y_k) ln(1 − p_k)`.
pub fn nl_loss(p: &[f64], y_or: &[f64]) -> Result<LossTerm> {
    check_probability(p)?;
    if p.len() != y_or.len() {
        return Err(Error::invalid("prediction and label widths differ"));
    }
    if y_or.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid(format!("{y_or:?} is not a binary vector")));
    }
    let mut value = 0.0;
    let mut grad_p = vec![0.0; p.len()];
    for k in 0..p.len() {
        if y_or[k] == 1.0 {
            continue;
        }
        let q = 1.0 - p[k];
        if q > LOG_CLAMP {
            value -= q.ln();
            grad_p[k] = 1.0 / q;
        } else {
            value -= LOG_CLAMP.ln();
        }
    }
    Ok(LossTerm {
        value,
        grad_logits: softmax_backward(p, &grad_p, 1.0),
    })
}

/// Cross-entropy against a one-hot annotation; gradient `p − y`.
pub fn ce_loss(p: &[f64], y: &[f64]) -> Result<LossTerm> {
    check_probability(p)?;
    if p.len() != y.len() {
        return Err(Error::invalid("prediction and label widths differ"));
    }
    let c = check_one_hot(y)?;
    Ok(LossTerm {
        value: -p[c].max(LOG_CLAMP).ln(),
        grad_logits: p.iter().zip(y).map(|(pk, yk)| pk - yk).collect(),
    })
}

/// Supervised contrastive loss over one batch.
///
/// Features are L2-normalized first. Anchors without any same-label partner
/// contribute nothing and are left out of the average. Returns the mean
/// loss over contributing anchors and its gradient with respect to each raw
/// feature vector.
pub fn supcon_loss(features: &[Vec<f64>], labels: &[usize], temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = features.len();
    if n < 2 {
        return Err(Error::invalid("contrastive loss needs a batch of at least 2"));
    }
    if labels.len() != n {
        return Err(Error::invalid("feature and label counts differ"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    let normed = features
        .iter()
        .map(|z| l2_normalize(z))
        .collect::<Result<Vec<_>>>()?;
    let dim = normed[0].len();
    let mut grad_hat = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut anchors = 0usize;

    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let sims: Vec<f64> = (0..n)
            .map(|j| if j == i { f64::NEG_INFINITY } else { dot(&normed[i], &normed[j]) / temperature })
            .collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_denominator = max + sims.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let inv_pos = 1.0 / positives.len() as f64;
        total -= positives.iter().map(|&u| sims[u] - log_denominator).sum::<f64>() * inv_pos;

        // dL_i/ds_ij = softmax_j − 1[j ∈ U(i)] / |U(i)|
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut coeff = (sims[j] - log_denominator).exp();
            if labels[j] == labels[i] {
                coeff -= inv_pos;
            }
            let coeff = coeff / temperature;
            axpy(coeff, &normed[j], &mut grad_hat[i]);
            axpy(coeff, &normed[i], &mut grad_hat[j]);
        }
    }
    if anchors == 0 {
        return Ok((0.0, vec![vec![0.0; dim]; n]));
    }
    let scale = 1.0 / anchors as f64;
    let grads = features
        .iter()
        .zip(&normed)
        .zip(&grad_hat)
        .map(|((z, zh), g)| {
            // through z ↦ z / ‖z‖
            let r = crate::numcore::norm(z);
            let proj = dot(zh, g);
            g.iter()
                .zip(zh)
                .map(|(gk, hk)| scale * (gk - hk * proj) / r)
                .collect()
        })
        .collect();
    Ok((total * scale, grads))
}

/// Per-class feature centroids, optionally carried across batches by an EMA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCentroids {
    centroids: Vec<Option<Vec<f64>>>,
    ema: Option<f64>,
}

impl ClassCentroids {
    pub fn new(classes: usize, ema: Option<f64>) -> Self {
        ClassCentroids {
            centroids: vec![None; classes],
            ema,
        }
    }

    pub fn classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.centroids[class].as_deref()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.centroids[class].is_some()
    }

    pub fn seen_count(&self) -> usize {
        self.centroids.iter().filter(|c| c.is_some()).count()
    }

    /// Folds the batch means into the running centroids. Without an EMA
    /// coefficient the batch means replace the stored state entirely.
    pub fn update(&mut self, batch: &ClassCentroids) {
        for (run, new) in self.centroids.iter_mut().zip(&batch.centroids) {
            let Some(new) = new else {
                if self.ema.is_none() {
                    *run = None;
                }
                continue;
            };
            match (run.as_mut(), self.ema) {
                (Some(old), Some(m)) => {
                    for (o, n) in old.iter_mut().zip(new) {
                        *o = m * *o + (1.0 - m) * n;
                    }
                }
                _ => *run = Some(new.clone()),
            }
        }
    }
}

/// Mean feature of the samples whose predicted class is `k`, for every `k`.
pub fn batch_centroids(features: &[Vec<f64>], predictions: &[Vec<f64>]) -> Result<ClassCentroids> {
    if features.is_empty() || features.len() != predictions.len() {
        return Err(Error::invalid("centroids need a non-empty batch with one prediction per feature"));
    }
    let classes = predictions[0].len();
    let dim = features[0].len();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (z, p) in features.iter().zip(predictions) {
        let k = argmax_tiebreak(p)?;
        axpy(1.0, z, &mut sums[k]);
        counts[k] += 1;
    }
    let centroids = sums
        .into_iter()
        .zip(counts)
        .map(|(s, n)| (n > 0).then(|| s.into_iter().map(|v| v / n as f64).collect()))
        .collect();
    Ok(ClassCentroids { centroids, ema: None })
}

/// Softmax of cosine similarities to the seen centroids; unseen classes get 0.
pub fn pseudo_label(z: &[f64], centroids: &ClassCentroids, temperature: f64) -> Result<Vec<f64>> {
    let seen: Vec<usize> = (0..centroids.classes()).filter(|&k| centroids.is_seen(k)).collect();
    if seen.is_empty() {
        return Err(Error::degenerate("no class centroid has been observed yet"));
    }
    let sims = seen
        .iter()
        .map(|&k| cosine_similarity(z, centroids.get(k).unwrap()))
        .collect::<Result<Vec<_>>>()?;
    let probs = softmax(&sims, temperature)?;
    let mut out = vec![0.0; centroids.classes()];
    for (k, p) in seen.into_iter().zip(probs) {
        out[k] = p;
    }
    Ok(out)
}

/// Temporal ensemble of pseudo-labels keyed by original image id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    beta: f64,
    classes: usize,
    epoch: usize,
    entries: BTreeMap<u64, Vec<f64>>,
}

impl MemoryBank {
    pub fn new(classes: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::invalid(format!("memory momentum {beta} outside (0, 1)")));
        }
        Ok(MemoryBank {
            beta,
            classes,
            epoch: 0,
            entries: BTreeMap::new(),
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Stored vector for `id`, or the zero initialization if never updated.
    pub fn get(&self, id: u64) -> Vec<f64> {
        self.entries
            .get(&id)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.classes])
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.entries.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    /// `m ← β m + (1 − β) p̂`; unknown ids start from zero.
    pub fn update(&mut self, id: u64, p_hat: &[f64]) -> Result<()> {
        if p_hat.len() != self.classes {
            return Err(Error::invalid("pseudo-label width does not match the memory bank"));
        }
        check_probability(p_hat)?;
        let beta = self.beta;
        let slot = self.entries.entry(id).or_insert_with(|| vec![0.0; p_hat.len()]);
        for (m, q) in slot.iter_mut().zip(p_hat) {
            *m = beta * *m + (1.0 - beta) * q;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegSign {
    /// `ln(1 − ⟨p̂, p⟩)`: minimizing maximizes agreement with memory.
    #[default]
    Prose,
    /// `−ln(1 − ⟨p̂, p⟩)` as typeset.
    Literal,
}

impl std::str::FromStr for RegSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prose" => Ok(RegSign::Prose),
            "literal" => Ok(RegSign::Literal),
            other => Err(Error::Config(format!("unknown reg-sign {other:?} (prose | literal)"))),
        }
    }
}

/// Memory regularizer. The memory vector is a constant target.
pub fn reg_loss(p: &[f64], memory: &[f64], sign: RegSign) -> Result<LossTerm> {
    if p.len() != memory.len() {
        return Err(Error::invalid("prediction and memory widths differ"));
    }
    let inner = dot(memory, p);
    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&inner) {
        return Err(Error::invalid(format!("memory/prediction inner product {inner} outside [0, 1]")));
    }
    let s = match sign {
        RegSign::Prose => 1.0,
        RegSign::Literal => -1.0,
    };
    let upper = 1.0 - LOG_CLAMP;
    if inner >= upper {
        return Ok(LossTerm {
            value: s * LOG_CLAMP.ln(),
            grad_logits: vec![0.0; p.len()],
        });
    }
    let q = 1.0 - inner;
    let grad_p: Vec<f64> = memory.iter().map(|m| -s * m / q).collect();
    Ok(LossTerm {
        value: s * q.ln(),
        grad_logits: softmax_backward(p, &grad_p, 1.0),
    })
}

/// Hinge penalty that is zero exactly when `p` rises up to `mode` and falls
/// after it. `mode` is 0-based; the subgradient at a tie is taken as 0.
pub fn unimodal_loss(p: &[f64], mode: usize) -> Result<LossTerm> {
    let c = p.len();
    if mode >= c {
        return Err(Error::invalid(format!("mode {} outside 1..={c}", mode + 1)));
    }
    let mut value = 0.0;
    let mut grad_p = vec![0.0; c];
    for k in 0..mode {
        let v = p[k] - p[k + 1];
        if v > 0.0 {
            value += v;
            grad_p[k] += 1.0;
            grad_p[k + 1] -= 1.0;
        }
    }
    for k in mode..c.saturating_sub(1) {
        let v = p[k + 1] - p[k];
        if v > 0.0 {
            value += v;
            grad_p[k + 1] += 1.0;
            grad_p[k] -= 1.0;
        }
    }
    Ok(LossTerm {
        value,
        grad_logits: softmax_backward(p, &grad_p, 1.0),
    })
}

/// Weighted sum of the fine-tuning terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub reg: f64,
    pub uni: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub total: f64,
    pub grad_logits: Vec<f64>,
}

pub fn mu_total_loss(ce: &LossTerm, reg: &LossTerm, uni: &LossTerm, alpha1: f64, alpha2: f64) -> Result<LossBreakdown> {
    for (name, v) in [("ce", ce.value), ("reg", reg.value), ("uni", uni.value)] {
        if !v.is_finite() {
            return Err(Error::numeric(name, format!("loss value {v}")));
        }
    }
    let mut grad = ce.grad_logits.clone();
    axpy(alpha1, &reg.grad_logits, &mut grad);
    axpy(alpha2, &uni.grad_logits, &mut grad);
    Ok(LossBreakdown {
        ce: ce.value,
        reg: reg.value,
        uni: uni.value,
        alpha1,
        alpha2,
        total: ce.value + alpha1 * reg.value + alpha2 * uni.value,
        grad_logits: grad,
    })
}
