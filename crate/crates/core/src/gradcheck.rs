//! Central finite-difference checks of every analytic gradient.
//!
//! Each check draws random instances, compares the analytic gradient with a
//! central difference and records the worst norm-wise relative error.
//! Instances within `KINK_MARGIN` of a hinge or clamp boundary are redrawn,
//! since a finite difference straddling a kink is not a derivative.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::{ce_loss, mu_total_loss, nl_loss, one_hot, reg_loss, supcon_loss, unimodal_loss, RegSign, LOG_CLAMP};
use crate::model::{Activation, Classifier, ModelDims, Parameters};
use crate::numcore::{dot, finite_difference_gradient, relative_error, softmax, SeededRng};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 100;
/// Minimum distance of a sampled point from any hinge kink.
pub const KINK_MARGIN: f64 = 1e-3;

const CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<GradCheck>,
    pub elapsed_secs: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub instances: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            instances: DEFAULT_INSTANCES,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
        }
    }
}

fn random_logits(rng: &mut SeededRng, scale: f64) -> Vec<f64> {
    (0..CLASSES).map(|_| scale * rng.normal()).collect()
}

fn random_simplex(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -rng.uniform().max(1e-12).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn probs(z: &[f64]) -> Vec<f64> {
    softmax(z, 1.0).expect("non-empty logits")
}

/// True when every adjacent difference of `p` is at least `KINK_MARGIN` from zero.
fn clear_of_kinks(p: &[f64]) -> bool {
    p.windows(2).all(|w| (w[0] - w[1]).abs() >= KINK_MARGIN)
}

fn check<S, I>(name: &str, opts: &GradcheckOptions, rng: &mut SeededRng, mut sample: S) -> Result<GradCheck>
where
    S: FnMut(&mut SeededRng) -> Option<I>,
    I: FnOnce(f64) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < opts.instances {
        if let Some(instance) = sample(rng) {
            worst = worst.max(instance(opts.step)?);
            done += 1;
        }
    }
    Ok(GradCheck {
        name: name.into(),
        instances: done,
        max_relative_error: worst,
        passed: worst < opts.tolerance,
    })
}

/// Relative error between `analytic` and the central difference of `f` at `x`.
fn compare<F: FnMut(&[f64]) -> f64>(f: F, x: &[f64], analytic: &[f64], h: f64) -> Result<f64> {
    let numeric = finite_difference_gradient(f, x, h)?;
    Ok(relative_error(analytic, &numeric))
}

pub fn check_nl(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<GradCheck> {
    check("nl", opts, rng, |rng| {
        let z = random_logits(rng, 2.0);
        let mut y: Vec<f64> = (0..CLASSES).map(|_| (rng.uniform() < 0.4) as u8 as f64).collect();
        y[rng.below(CLASSES)] = 1.0;
        // stay away from the log clamp
        if probs(&z).iter().any(|&p| 1.0 - p < 1e3 * LOG_CLAMP) {
            return None;
        }
        Some(move |h| {
            let analytic = nl_loss(&probs(&z), &y)?.grad_logits;
            compare(|x| nl_loss(&probs(x), &y).map(|t| t.value).unwrap_or(f64::NAN), &z, &analytic, h)
        })
    })
}

pub fn check_ce(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<GradCheck> {
    check("ce", opts, rng, |rng| {
        let z = random_logits(rng, 2.0);
        let y = one_hot(rng.below(CLASSES), CLASSES);
        Some(move |h| {
            let analytic = ce_loss(&probs(&z), &y)?.grad_logits;
            compare(|x| ce_loss(&probs(x), &y).map(|t| t.value).unwrap_or(f64::NAN), &z, &analytic, h)
        })
    })
}

pub fn check_supcon(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<GradCheck> {
    const BATCH: usize = 6;
    const DIM: usize = 4;
    check("con", opts, rng, |rng| {
        let flat: Vec<f64> = (0..BATCH * DIM).map(|_| rng.normal()).collect();
        let labels: Vec<usize> = (0..BATCH).map(|_| rng.below(3)).collect();
        let temperature = rng.uniform_range(0.1, 1.0);
        Some(move |h| {
            let rows = |v: &[f64]| v.chunks(DIM).map(<[f64]>::to_vec).collect::<Vec<_>>();
            let (_, grad) = supcon_loss(&rows(&flat), &labels, temperature)?;
            let analytic: Vec<f64> = grad.concat();
            compare(
                |x| supcon_loss(&rows(x), &labels, temperature).map(|r| r.0).unwrap_or(f64::NAN),
                &flat,
                &analytic,
                h,
            )
        })
    })
}

fn random_memory(rng: &mut SeededRng) -> Vec<f64> {
    // an EMA of probability vectors started from zero has total mass 1 − β^t
    let mass = 1.0 - 0.9f64.powi(1 + rng.below(30) as i32);
    random_simplex(rng, CLASSES).into_iter().map(|v| v * mass).collect()
}

pub fn check_reg(opts: &GradcheckOptions, rng: &mut SeededRng, sign: RegSign) -> Result<GradCheck> {
    let name = match sign {
        RegSign::Prose => "reg",
        RegSign::Literal => "reg (literal sign)",
    };
    check(name, opts, rng, |rng| {
        let z = random_logits(rng, 2.0);
        let m = random_memory(rng);
        if 1.0 - dot(&probs(&z), &m) < KINK_MARGIN {
            return None;
        }
        Some(move |h| {
            let analytic = reg_loss(&probs(&z), &m, sign)?.grad_logits;
            compare(|x| reg_loss(&probs(x), &m, sign).map(|t| t.value).unwrap_or(f64::NAN), &z, &analytic, h)
        })
    })
}

pub fn check_uni(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<GradCheck> {
    check("uni", opts, rng, |rng| {
        let z = random_logits(rng, 1.5);
        let mode = rng.below(CLASSES);
        if !clear_of_kinks(&probs(&z)) {
            return None;
        }
        Some(move |h| {
            let analytic = unimodal_loss(&probs(&z), mode)?.grad_logits;
            compare(|x| unimodal_loss(&probs(x), mode).map(|t| t.value).unwrap_or(f64::NAN), &z, &analytic, h)
        })
    })
}

struct TotalInstance {
    y: Vec<f64>,
    memory: Vec<f64>,
    mode: usize,
    alpha1: f64,
    alpha2: f64,
}

impl TotalInstance {
    fn draw(rng: &mut SeededRng) -> Self {
        TotalInstance {
            y: one_hot(rng.below(CLASSES), CLASSES),
            memory: random_memory(rng),
            mode: rng.below(CLASSES),
            alpha1: rng.uniform_range(0.0, 2.0),
            alpha2: rng.uniform_range(0.0, 5.0),
        }
    }

    fn admissible(&self, p: &[f64]) -> bool {
        clear_of_kinks(p) && 1.0 - dot(p, &self.memory) >= KINK_MARGIN
    }

    fn loss(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = probs(z);
        let b = mu_total_loss(
            &ce_loss(&p, &self.y)?,
            &reg_loss(&p, &self.memory, RegSign::Prose)?,
            &unimodal_loss(&p, self.mode)?,
            self.alpha1,
            self.alpha2,
        )?;
        Ok((b.total, b.grad_logits))
    }
}

pub fn check_total(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<GradCheck> {
    check("total", opts, rng, |rng| {
        let z = random_logits(rng, 1.5);
        let inst = TotalInstance::draw(rng);
        if !inst.admissible(&probs(&z)) {
            return None;
        }
        Some(move |h| {
            let (_, analytic) = inst.loss(&z)?;
            compare(|x| inst.loss(x).map(|r| r.0).unwrap_or(f64::NAN), &z, &analytic, h)
        })
    })
}

const MODEL_BATCH: usize = 5;

fn small_model(rng: &mut SeededRng) -> Result<(Classifier, Vec<Vec<f64>>)> {
    let dims = ModelDims::new(6, 7, 4, CLASSES);
    let model = Classifier::init(dims, Activation::Tanh, rng)?;
    let xs = (0..MODEL_BATCH).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
    Ok((model, xs))
}

/// Parameter gradients of the batch-mean total loss through the whole network.
pub fn check_model_total(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<GradCheck> {
    check("model/total", opts, rng, |rng| {
        let (model, xs) = small_model(rng).ok()?;
        let insts: Vec<TotalInstance> = (0..MODEL_BATCH).map(|_| TotalInstance::draw(rng)).collect();
        let probe_cache = model.forward_batch(&xs.iter().map(Vec::as_slice).collect::<Vec<_>>()).ok()?;
        if !probe_cache.probs.iter().zip(&insts).all(|(p, i)| i.admissible(p)) {
            return None;
        }
        Some(move |h| {
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let cache = model.forward_batch(&refs)?;
            let batch_loss = |m: &Classifier| -> Result<(f64, Vec<Vec<f64>>)> {
                let c = m.forward_batch(&refs)?;
                let mut total = 0.0;
                let mut grads = Vec::new();
                for (z, inst) in c.logits.iter().zip(&insts) {
                    let (v, g) = inst.loss(z)?;
                    total += v / MODEL_BATCH as f64;
                    grads.push(g.iter().map(|x| x / MODEL_BATCH as f64).collect());
                }
                Ok((total, grads))
            };
            let (_, grad_logits) = batch_loss(&model)?;
            let analytic = model.backward(&cache, &grad_logits, None)?.flatten();
            let mut probe = model.clone();
            compare(
                |theta| {
                    probe.assign_flat(theta);
                    batch_loss(&probe).map(|r| r.0).unwrap_or(f64::NAN)
                },
                &model.flatten(),
                &analytic,
                h,
            )
        })
    })
}

/// Encoder parameter gradients of the contrastive loss.
pub fn check_model_supcon(opts: &GradcheckOptions, rng: &mut SeededRng) -> Result<GradCheck> {
    check("model/con", opts, rng, |rng| {
        let (model, xs) = small_model(rng).ok()?;
        let labels: Vec<usize> = (0..MODEL_BATCH).map(|_| rng.below(2)).collect();
        Some(move |h| {
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            let encoder = model.encoder.clone();
            let cache = encoder.forward_batch(&refs)?;
            let (_, grad_z) = supcon_loss(&cache.features, &labels, 0.5)?;
            let mut grads = encoder.zeros_like();
            encoder.backward(&cache, &grad_z, &mut grads)?;
            let mut probe = encoder.clone();
            compare(
                |theta| {
                    probe.assign_flat(theta);
                    probe
                        .forward_batch(&refs)
                        .and_then(|c| supcon_loss(&c.features, &labels, 0.5))
                        .map(|r| r.0)
                        .unwrap_or(f64::NAN)
                },
                &encoder.flatten(),
                &grads.flatten(),
                h,
            )
        })
    })
}

/// Runs every check; model-level checks use a fifth of the instances.
pub fn run_suite(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut rng = SeededRng::new(opts.seed, 0);
    let model_opts = GradcheckOptions {
        instances: opts.instances.div_ceil(5),
        ..*opts
    };
    let checks = vec![
        check_nl(opts, &mut rng)?,
        check_supcon(opts, &mut rng)?,
        check_ce(opts, &mut rng)?,
        check_reg(opts, &mut rng, RegSign::Prose)?,
        check_reg(opts, &mut rng, RegSign::Literal)?,
        check_uni(opts, &mut rng)?,
        check_total(opts, &mut rng)?,
        check_model_total(&model_opts, &mut rng)?,
        check_model_supcon(&model_opts, &mut rng)?,
    ];
    Ok(GradcheckReport {
        step: opts.step,
        tolerance: opts.tolerance,
        checks,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
