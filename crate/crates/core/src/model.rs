//! Feed-forward classifier: an encoder producing features and a linear head
//! producing class logits, trained with Adam under a per-epoch exponential
//! learning-rate decay.
//!
//! Gradients are stored in the same structs as the parameters, so a
//! zero-initialized [`Classifier`] doubles as a gradient accumulator.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{axpy, softmax, DenseMatrix, SeededRng};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub feature: usize,
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, hidden: usize, feature: usize, classes: usize) -> Self {
        ModelDims {
            input,
            hidden,
            feature,
            classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.feature == 0 || self.classes == 0 {
            return Err(Error::invalid(format!("all layer sizes must be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Tensors a parameter container exposes to the optimizer, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`, row-major.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: DenseMatrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn init(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut layer = Linear::zeros(input, output);
        for w in layer.weight.values_mut() {
            *w = rng.uniform_range(-bound, bound);
        }
        layer
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.mul_vec(x);
        y.iter_mut().zip(&self.bias).for_each(|(a, b)| *a += b);
        y
    }

    /// Accumulates `grad_out ⊗ input` into `self` (used as a gradient buffer)
    /// and returns the gradient with respect to the input.
    fn accumulate(&mut self, layer: &Linear, input: &[f64], grad_out: &[f64]) -> Vec<f64> {
        for (r, &g) in grad_out.iter().enumerate() {
            if g != 0.0 {
                axpy(g, input, self.weight.row_mut(r));
            }
            self.bias[r] += g;
        }
        layer.weight.tr_mul_vec(grad_out)
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.weight.values(), &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.values_mut(), &mut self.bias]
    }
}

/// `input → hidden (activation) → features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub hidden: Linear,
    pub feature: Linear,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub encoder: Encoder,
    pub head: Head,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub inputs: Vec<Vec<f64>>,
    pub hidden: Vec<Vec<f64>>,
    pub features: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.len()
    }
}

impl Encoder {
    pub fn init(dims: ModelDims, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        dims.validate()?;
        Ok(Encoder {
            hidden: Linear::init(dims.input, dims.hidden, rng),
            feature: Linear::init(dims.hidden, dims.feature, rng),
            activation,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            hidden: Linear::zeros(self.hidden.input_dim(), self.hidden.output_dim()),
            feature: Linear::zeros(self.feature.input_dim(), self.feature.output_dim()),
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.output_dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has length {}, encoder expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Returns `(hidden activations, features)`.
    fn forward_one(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut h = self.hidden.forward(x);
        h.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        let z = self.feature.forward(&h);
        (h, z)
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_one(x).1)
    }

    pub fn forward_batch(&self, xs: &[&[f64]]) -> Result<ForwardCache> {
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(xs.len()),
            hidden: Vec::with_capacity(xs.len()),
            features: Vec::with_capacity(xs.len()),
            logits: Vec::new(),
            probs: Vec::new(),
        };
        for x in xs {
            self.check_input(x)?;
            let (h, z) = self.forward_one(x);
            cache.inputs.push(x.to_vec());
            cache.hidden.push(h);
            cache.features.push(z);
        }
        Ok(cache)
    }

    /// Backpropagates per-sample feature gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, grad_features: &[Vec<f64>], grads: &mut Encoder) -> Result<()> {
        if grad_features.len() != cache.batch_size() {
            return Err(Error::invalid(format!(
                "feature gradient batch {} does not match cached batch {}",
                grad_features.len(),
                cache.batch_size()
            )));
        }
        for (i, gz) in grad_features.iter().enumerate() {
            if gz.len() != self.feature_dim() {
                return Err(Error::invalid("feature gradient has the wrong width"));
            }
            let gh = grads.feature.accumulate(&self.feature, &cache.hidden[i], gz);
            let gpre: Vec<f64> = gh
                .iter()
                .zip(&cache.hidden[i])
                .map(|(g, &h)| g * self.activation.derivative_from_output(h))
                .collect();
            grads.hidden.accumulate(&self.hidden, &cache.inputs[i], &gpre);
        }
        Ok(())
    }
}

impl Parameters for Encoder {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.hidden.tensors();
        t.extend(self.feature.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.hidden.tensors_mut();
        t.extend(self.feature.tensors_mut());
        t
    }
}

impl Head {
    pub fn init(feature: usize, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if feature == 0 || classes == 0 {
            return Err(Error::invalid("head dimensions must be >= 1"));
        }
        Ok(Head {
            output: Linear::init(feature, classes, rng),
        })
    }

    pub fn classes(&self) -> usize {
        self.output.output_dim()
    }
}

impl Parameters for Head {
    fn tensors(&self) -> Vec<&[f64]> {
        self.output.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.output.tensors_mut()
    }
}

impl Classifier {
    pub fn init(dims: ModelDims, activation: Activation, rng: &mut SeededRng) -> Result<Self> {
        let encoder = Encoder::init(dims, activation, rng)?;
        let head = Head::init(dims.feature, dims.classes, rng)?;
        Ok(Classifier { encoder, head })
    }

    pub fn from_parts(encoder: Encoder, head: Head) -> Result<Self> {
        if encoder.feature_dim() != head.output.input_dim() {
            return Err(Error::invalid("encoder feature width does not match head input"));
        }
        Ok(Classifier { encoder, head })
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.encoder.input_dim(),
            hidden: self.encoder.hidden.output_dim(),
            feature: self.encoder.feature_dim(),
            classes: self.head.classes(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Classifier {
            encoder: self.encoder.zeros_like(),
            head: Head {
                output: Linear::zeros(self.head.output.input_dim(), self.head.classes()),
            },
        }
    }

    /// Features `z` and class probabilities `p` (softmax at temperature 1).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let cache = self.forward_batch(&[x])?;
        let ForwardCache {
            mut features,
            mut probs,
            ..
        } = cache;
        Ok((features.remove(0), probs.remove(0)))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.1)
    }

    pub fn forward_batch(&self, xs: &[&[f64]]) -> Result<ForwardCache> {
        let mut cache = self.encoder.forward_batch(xs)?;
        for z in &cache.features {
            let logits = self.head.output.forward(z);
            cache.probs.push(softmax(&logits, 1.0)?);
            cache.logits.push(logits);
        }
        Ok(cache)
    }

    /// Gradients of a loss given its per-sample derivatives with respect to
    /// the logits and, optionally, directly with respect to the features.
    /// Callers supply already batch-averaged derivatives.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &[Vec<f64>],
        grad_features: Option<&[Vec<f64>]>,
    ) -> Result<Classifier> {
        let n = cache.batch_size();
        if grad_logits.len() != n || grad_features.is_some_and(|g| g.len() != n) {
            return Err(Error::invalid("gradient batch size does not match the forward cache"));
        }
        let mut grads = self.zeros_like();
        let mut gz_all = Vec::with_capacity(n);
        for i in 0..n {
            if grad_logits[i].len() != self.head.classes() {
                return Err(Error::invalid("logit gradient has the wrong width"));
            }
            let mut gz = grads
                .head
                .output
                .accumulate(&self.head.output, &cache.features[i], &grad_logits[i]);
            if let Some(gf) = grad_features {
                axpy(1.0, &gf[i], &mut gz);
            }
            gz_all.push(gz);
        }
        self.encoder.backward(cache, &gz_all, &mut grads.encoder)?;
        Ok(grads)
    }
}

impl Parameters for Classifier {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }
}

/// `base · 0.95^epoch` for the default decay.
pub fn epoch_lr(base: f64, decay: f64, epoch: usize) -> f64 {
    base * decay.powi(epoch as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub base_lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(base_lr: f64, decay: f64) -> Self {
        Adam {
            base_lr,
            decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        epoch_lr(self.base_lr, self.decay, epoch)
    }

    /// One Adam update at the decayed learning rate for `epoch`.
    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, epoch: usize) -> Result<()> {
        let grad_tensors = grads.tensors();
        for (i, g) in grad_tensors.iter().enumerate() {
            if let Some(k) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(
                    "gradient",
                    format!("tensor {i} entry {k} is {}", g[k]),
                ));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = grad_tensors.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != grad_tensors.len() {
            return Err(Error::invalid("optimizer state does not match the parameter layout"));
        }
        self.step += 1;
        let lr = self.lr(epoch);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad_tensors)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Serialized model plus optionally the optimizer that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub dims: ModelDims,
    pub model: Classifier,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new(model: Classifier, optimizer: Option<Adam>) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_VERSION,
            dims: model.dims(),
            model,
            optimizer,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if ckpt.schema_version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint schema version {} is not supported",
                ckpt.schema_version
            )));
        }
        if ckpt.model.dims() != ckpt.dims || !ckpt.model.all_finite() {
            return Err(Error::Schema("checkpoint dims or weights are inconsistent".into()));
        }
        Ok(ckpt)
    }
}
