//! Dense numeric kernels shared by the model, the losses and the metrics.
//!
//! Vectors are plain `&[f64]` / `Vec<f64>`; matrices are row-major
//! [`DenseMatrix`]. Class indices are 0-based inside the library and 1-based
//! (grades 1..=C) only at the external interfaces.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a vector is a probability vector.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("matrix dimensions must be positive"));
        }
        if rows * cols != values.len() {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    /// Stacks equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("cannot build a matrix from zero rows"))?;
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        DenseMatrix::from_vec(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.iter_rows().map(|row| dot(row, v)).collect()
    }

    /// `selfᵀ * v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &s) in self.iter_rows().zip(v) {
            axpy(s, row, &mut out);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Deterministic random stream identified by `(seed, stream)`.
///
/// Backed by ChaCha8, whose native stream parameter gives independent
/// sequences for the same seed.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// A fresh generator on another stream of the same seed.
    pub fn fork(&self, stream: u64) -> SeededRng {
        SeededRng::new(self.seed, stream)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Index drawn from an (unnormalized, non-negative) weight vector.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        // rounding can leave u marginally above the last bucket
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += s * x`
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Tempered softmax with max-subtraction.
pub fn softmax(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("softmax", "non-finite logit"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&l| ((l - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    Ok(out)
}

/// Backpropagates `grad_p = dL/dp` through `p = softmax(logits / temperature)`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64], temperature: f64) -> Vec<f64> {
    let inner = dot(p, grad_p);
    p.iter()
        .zip(grad_p)
        .map(|(&pk, &gk)| pk * (gk - inner) / temperature)
        .collect()
}

pub fn check_probability(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    if p.iter().any(|&v| !(v >= -PROB_TOL) || !v.is_finite()) {
        return Err(Error::invalid(format!("negative or non-finite probability in {p:?}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_probability(p)?;
    Ok(-p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>())
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cosine similarity of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::degenerate("cosine similarity with a zero vector"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::degenerate("cannot normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// 0-based index of the maximum; ties go to the lowest index.
pub fn argmax_tiebreak(p: &[f64]) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::invalid("argmax of an empty vector"));
    }
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Central finite differences of `f` at `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::invalid(format!("finite-difference step {h} outside [1e-7, 1e-4]")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f(&probe);
        probe[k] = x[k] - h;
        let down = f(&probe);
        probe[k] = x[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(
                "finite difference",
                format!("objective not finite around coordinate {k}"),
            ));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 || values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngCore;

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let p = softmax(&[0.0, 0.0, 0.0], 1.0).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_sharp_temperature() {
        // exp(10) / (exp(10) + 2), computed separately with python's math module
        let p = softmax(&[1.0, 0.0, 0.0], 0.1).unwrap();
        assert!((p[0] - 0.999_909_208_384_340_9).abs() < 1e-12);
        assert!((p[1] - 4.539_580_782_951_091e-5).abs() < 1e-12);
        assert_eq!(p[1], p[2]);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(softmax(&[], 1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(softmax(&[1.0], 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(softmax(&[1.0], -2.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax(&[1000.0, 999.0], 1.0).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy(&[0.2; 5]).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!((entropy(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 0.693_147_180_559_945_3).abs() < 1e-12);
        assert!(entropy(&[0.5, 0.6]).is_err());
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(l2_normalize(&[-2.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        assert!(matches!(l2_normalize(&[0.0, 0.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn argmax_examples() {
        // reported 1-based: 2, 1, 4
        assert_eq!(argmax_tiebreak(&[0.1, 0.7, 0.2]).unwrap() + 1, 2);
        assert_eq!(argmax_tiebreak(&[0.4, 0.4, 0.2]).unwrap() + 1, 1);
        assert_eq!(argmax_tiebreak(&[0.0, 0.0, 0.0, 1.0]).unwrap() + 1, 4);
        assert!(argmax_tiebreak(&[]).is_err());
    }

    #[test]
    fn finite_differences_examples() {
        let g = finite_difference_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5)
            .unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_difference_gradient(|_| 3.0, &[1.0, 2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(finite_difference_gradient(|_| 0.0, &[1.0], 1e-2).is_err());
        assert!(matches!(
            finite_difference_gradient(|x| if x[0] < 1.0 { f64::NAN } else { x[0] }, &[1.0], 1e-5),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn seeded_rng_reproducible_and_stream_separated() {
        let mut a = SeededRng::new(7, 3);
        let mut b = SeededRng::new(7, 3);
        let mut c = SeededRng::new(7, 4);
        let xs: Vec<u64> = (0..100_000).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..100_000).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let zs: Vec<u64> = (0..100).map(|_| c.next_u64()).collect();
        assert_ne!(&xs[..100], &zs[..]);
    }

    #[test]
    fn entropy_maximized_by_uniform() {
        let mut rng = SeededRng::new(11, 0);
        let max = 4f64.ln();
        for _ in 0..10_000 {
            let raw: Vec<f64> = (0..4).map(|_| rng.uniform()).collect();
            let s: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
            assert!(entropy(&p).unwrap() <= max + 1e-12);
        }
    }

    #[test]
    fn sample_std_matches_definition() {
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(sample_std(&[4.0]), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn softmax_sums_to_one(logits in prop::collection::vec(-50.0f64..50.0, 1..12), t in 0.05f64..5.0) {
            let p = softmax(&logits, t).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn softmax_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..10), c in -100.0f64..100.0) {
            let p = softmax(&logits, 1.0).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
            let q = softmax(&shifted, 1.0).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_scale_invariant(a in prop::collection::vec(-10.0f64..10.0, 2..8), s in 0.01f64..100.0) {
            prop_assume!(norm(&a) > 1e-3);
            let b: Vec<f64> = a.iter().map(|v| v * s).collect();
            prop_assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
