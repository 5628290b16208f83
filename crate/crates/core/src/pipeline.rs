//! Two-stage training: negative-learning warm-up with reliable-sample
//! selection and a contrastive encoder warm-up, followed by fine-tuning with
//! memory pseudo-labels and unimodal regularization. Also hosts the
//! cross-entropy baselines, the experiment runner and the ablation grid.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, DataSource, ExperimentConfig, HyperParams, MemoryCadence, Method};
use crate::data::{
    ave_label, generate_benchmark, load_csv, or_label, proxy_label, split_to_single_annotation, train_val_split,
    Dataset, LabeledSample, ProxyMode, SplitEntry, ViewMode,
};
use crate::error::{Error, Result};
use crate::losses::{
    batch_centroids, ce_loss, mu_total_loss, nl_loss, one_hot, pseudo_label, reg_loss, supcon_loss, unimodal_loss,
    ClassCentroids, LossTerm, MemoryBank,
};
use crate::metrics::{accuracy, confusion_matrix, macro_auc, macro_f1, map_3class, map_probs_3class};
use crate::model::{Adam, Checkpoint, Classifier, Encoder, Head, ModelDims};
use crate::numcore::{argmax_tiebreak, cosine_similarity, entropy, SeededRng};
use crate::report::{write_json, write_report, MetricsReport, RunMetrics, SelectionStats, TaskMetrics};

// rng streams, one per consumer, so changing one stage never perturbs another
const STREAM_SPLIT: u64 = 1;
const STREAM_NL_INIT: u64 = 2;
const STREAM_NL_SHUFFLE: u64 = 3;
const STREAM_SCL_INIT: u64 = 4;
const STREAM_SCL_SHUFFLE: u64 = 5;
const STREAM_MU_INIT: u64 = 6;
const STREAM_MU_SHUFFLE: u64 = 7;
const STREAM_LABEL_SAMPLING: u64 = 8;
const STREAM_JITTER: u64 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Negative-learning warm-up of the selection backbone.
    Nl,
    /// Supervised contrastive encoder training on the reliable set.
    Scl,
    /// Fine-tuning with memory pseudo-labels and unimodal regularization.
    Mu,
    /// Plain cross-entropy (baselines).
    Ce,
}

/// Per-epoch means of every loss term; disabled terms stay at zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub nl: f64,
    pub con: f64,
    pub ce: f64,
    pub reg: f64,
    pub uni: f64,
    pub total: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: Stage,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl StageTrace {
    fn new(stage: Stage) -> Self {
        StageTrace {
            stage,
            epochs: Vec::new(),
            best_epoch: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub method: Method,
    pub stages: Vec<StageTrace>,
    pub selection: Option<SelectionStats>,
    pub split_warning: Option<String>,
    pub memory_size: usize,
    pub wall_clock_secs: f64,
    pub config: ExperimentConfig,
}

/// Data for one run, with model inputs already assembled for the view mode.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub train_x: Vec<Vec<f64>>,
    pub val_x: Vec<Vec<f64>>,
    pub test_x: Vec<Vec<f64>>,
    /// AVE proxy labels of the validation images (early stopping target).
    pub val_targets: Vec<usize>,
    pub view_mode: ViewMode,
    pub split_warning: Option<String>,
}

impl Prepared {
    pub fn classes(&self) -> usize {
        self.train.classes
    }

    pub fn dims(&self, hp: &HyperParams) -> ModelDims {
        ModelDims::new(
            self.view_mode.input_dim(self.train.view_count, self.train.view_dim),
            hp.hidden_dim,
            hp.feature_dim,
            self.classes(),
        )
    }
}

/// Loads or generates the data for `seed` and splits off validation images.
pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let (all, test) = match &config.data {
        DataSource::Synthetic { generator, n_test } => {
            let mut g = generator.clone();
            g.seed = g.seed.wrapping_add(seed);
            generate_benchmark(&g, *n_test)?
        }
        DataSource::Csv { train, test, classes } => (load_csv(train, *classes)?, load_csv(test, *classes)?),
    };
    if all.is_empty() || test.is_empty() {
        return Err(Error::Config("training and test data must be non-empty".into()));
    }
    let (train, val, info) = train_val_split(&all, config.hyper.val_fraction, &mut SeededRng::new(seed, STREAM_SPLIT))?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("validation split left an empty side".into()));
    }
    let view_mode = config.effective_view_mode();
    let val_targets = val.samples.iter().map(|s| ave_label(&s.annotations)).collect();
    let train_x = train.inputs(view_mode)?;
    let val_x = val.inputs(view_mode)?;
    let test_x = test.inputs(view_mode)?;
    Ok(Prepared {
        train_x,
        val_x,
        test_x,
        train,
        val,
        test,
        val_targets,
        view_mode,
        split_warning: info.warning,
    })
}

/// Evaluation target of a held-out sample: the unanimous label when several
/// annotators agree, otherwise the AVE proxy.
pub fn evaluation_target(sample: &LabeledSample) -> usize {
    sample.consensus().unwrap_or_else(|| ave_label(&sample.annotations))
}

fn predict_all(model: &Classifier, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    xs.iter().map(|x| model.predict(x)).collect()
}

fn argmaxes(probs: &[Vec<f64>]) -> Result<Vec<usize>> {
    probs.iter().map(|p| argmax_tiebreak(p)).collect()
}

pub fn validation_accuracy(model: &Classifier, xs: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    accuracy(&argmaxes(&predict_all(model, xs)?)?, targets)
}

/// Training inputs with optional Gaussian jitter.
struct InputFeed<'a> {
    inputs: &'a [Vec<f64>],
    jitter: f64,
    rng: SeededRng,
}

impl<'a> InputFeed<'a> {
    fn new(inputs: &'a [Vec<f64>], jitter: f64, seed: u64, stage: u64) -> Self {
        InputFeed {
            inputs,
            jitter,
            rng: SeededRng::new(seed, STREAM_JITTER + 16 * stage),
        }
    }

    fn batch(&mut self, samples: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
        samples
            .map(|i| {
                let mut x = self.inputs[i].clone();
                if self.jitter > 0.0 {
                    x.iter_mut().for_each(|v| *v += self.jitter * self.rng.normal());
                }
                x
            })
            .collect()
    }
}

fn as_refs(xs: &[Vec<f64>]) -> Vec<&[f64]> {
    xs.iter().map(Vec::as_slice).collect()
}

fn scale_rows(rows: &mut [Vec<f64>], s: f64) {
    rows.iter_mut().flatten().for_each(|v| *v *= s);
}

#[derive(Debug, Clone)]
pub struct NlOutcome {
    pub final_model: Classifier,
    /// Weights at the epoch with the best validation accuracy.
    pub best_model: Classifier,
    pub best_accuracy: f64,
    pub trace: StageTrace,
}

/// Trains the selection backbone with negative learning on OR-labels and keeps
/// the checkpoint with the best validation accuracy (patience-based early stop).
pub fn train_nl_warmup(data: &Prepared, hp: &HyperParams, seed: u64) -> Result<NlOutcome> {
    let classes = data.classes();
    let mut model = Classifier::init(data.dims(hp), hp.activation, &mut SeededRng::new(seed, STREAM_NL_INIT))?;
    let or_labels: Vec<Vec<f64>> = data.train.samples.iter().map(|s| or_label(&s.annotations, classes)).collect();
    let mut adam = Adam::new(hp.learning_rate, hp.lr_decay);
    let mut rng = SeededRng::new(seed, STREAM_NL_SHUFFLE);
    let mut feed = InputFeed::new(&data.train_x, hp.feature_jitter, seed, 0);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut trace = StageTrace::new(Stage::Nl);
    let mut best = (f64::NEG_INFINITY, model.clone());
    let mut since_best = 0;

    for epoch in 0..hp.nl_max_epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let xs = feed.batch(batch.iter().copied());
            let cache = model.forward_batch(&as_refs(&xs))?;
            let mut grads = Vec::with_capacity(batch.len());
            for (i, &s) in batch.iter().enumerate() {
                let t = nl_loss(&cache.probs[i], &or_labels[s])?;
                loss_sum += t.value;
                grads.push(t.grad_logits);
            }
            scale_rows(&mut grads, 1.0 / batch.len() as f64);
            let g = model.backward(&cache, &grads, None)?;
            adam.step(&mut model, &g, epoch).map_err(|e| tag(e, "nl"))?;
        }
        let val = validation_accuracy(&model, &data.val_x, &data.val_targets)?;
        let mean_loss = loss_sum / data.train.len() as f64;
        trace.epochs.push(EpochRecord {
            epoch,
            lr: adam.lr(epoch),
            nl: mean_loss,
            total: mean_loss,
            val_accuracy: Some(val),
            ..EpochRecord::default()
        });
        if val > best.0 {
            best = (val, model.clone());
            trace.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hp.nl_patience {
                break;
            }
        }
    }
    Ok(NlOutcome {
        final_model: model,
        best_accuracy: best.0,
        best_model: best.1,
        trace,
    })
}

fn tag(err: Error, term: &str) -> Error {
    match err {
        Error::Numeric { detail, .. } => Error::numeric(term, detail),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliableEntry {
    /// Index into the training dataset.
    pub sample: usize,
    pub image_id: u64,
    /// Backbone-predicted class (0-based).
    pub label: usize,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliableSet {
    pub quota: usize,
    pub entries: Vec<ReliableEntry>,
    pub per_class_counts: Vec<usize>,
    pub shortfall: Vec<usize>,
}

impl ReliableSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Share of entries whose label matches the hidden clean label.
    pub fn purity(&self, train: &Dataset) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        let mut hits = 0;
        for e in &self.entries {
            if train.samples[e.sample].clean? == e.label {
                hits += 1;
            }
        }
        Some(hits as f64 / self.entries.len() as f64)
    }

    pub fn stats(&self, train: &Dataset) -> SelectionStats {
        SelectionStats {
            quota_per_class: self.quota,
            per_class_counts: self.per_class_counts.clone(),
            shortfall: self.shortfall.clone(),
            purity: self.purity(train),
            annotation_agreement: train.annotation_agreement(),
        }
    }
}

/// The `⌊M/C⌋` lowest-entropy training images of each predicted class.
/// Ties keep dataset order; a short class is reported, not topped up.
pub fn select_reliable(backbone: &Classifier, train: &Dataset, train_x: &[Vec<f64>], m: usize) -> Result<ReliableSet> {
    let classes = train.classes;
    let quota = m / classes;
    let mut by_class: Vec<Vec<ReliableEntry>> = vec![Vec::new(); classes];
    for (i, x) in train_x.iter().enumerate() {
        let p = backbone.predict(x)?;
        let label = argmax_tiebreak(&p)?;
        by_class[label].push(ReliableEntry {
            sample: i,
            image_id: train.samples[i].id,
            label,
            entropy: entropy(&p)?,
        });
    }
    let mut entries = Vec::new();
    let mut per_class_counts = Vec::with_capacity(classes);
    let mut shortfall = Vec::with_capacity(classes);
    for mut cands in by_class {
        cands.sort_by(|a, b| a.entropy.total_cmp(&b.entropy).then(a.sample.cmp(&b.sample)));
        cands.truncate(quota);
        per_class_counts.push(cands.len());
        shortfall.push(quota - cands.len());
        entries.extend(cands);
    }
    Ok(ReliableSet {
        quota,
        entries,
        per_class_counts,
        shortfall,
    })
}

/// Trains the encoder with the supervised contrastive loss on the reliable set.
pub fn train_scl(
    mut encoder: Encoder,
    reliable: &ReliableSet,
    train_x: &[Vec<f64>],
    hp: &HyperParams,
    seed: u64,
) -> Result<(Encoder, StageTrace)> {
    if reliable.len() < 2 {
        return Err(Error::invalid(format!(
            "contrastive training needs at least 2 reliable samples, got {}",
            reliable.len()
        )));
    }
    let mut adam = Adam::new(hp.learning_rate, hp.lr_decay);
    let mut rng = SeededRng::new(seed, STREAM_SCL_SHUFFLE);
    let mut feed = InputFeed::new(train_x, hp.feature_jitter, seed, 1);
    let mut order: Vec<usize> = (0..reliable.len()).collect();
    let mut trace = StageTrace::new(Stage::Scl);
    for epoch in 0..hp.scl_epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for batch in order.chunks(hp.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let xs = feed.batch(batch.iter().map(|&k| reliable.entries[k].sample));
            let labels: Vec<usize> = batch.iter().map(|&k| reliable.entries[k].label).collect();
            let cache = encoder.forward_batch(&as_refs(&xs))?;
            let (loss, grad_z) = supcon_loss(&cache.features, &labels, hp.temperature)?;
            if !loss.is_finite() {
                return Err(Error::numeric("con", format!("loss {loss}")));
            }
            let mut grads = encoder.zeros_like();
            encoder.backward(&cache, &grad_z, &mut grads)?;
            adam.step(&mut encoder, &grads, epoch).map_err(|e| tag(e, "con"))?;
            loss_sum += loss;
            batches += 1;
        }
        let mean_loss = if batches > 0 { loss_sum / batches as f64 } else { 0.0 };
        trace.epochs.push(EpochRecord {
            epoch,
            lr: adam.lr(epoch),
            con: mean_loss,
            total: mean_loss,
            ..EpochRecord::default()
        });
    }
    Ok((encoder, trace))
}

/// Mean within-class and between-class cosine similarity of encoder features.
pub fn feature_separation(encoder: &Encoder, xs: &[&[f64]], labels: &[usize]) -> Result<(f64, f64)> {
    let feats = xs.iter().map(|x| encoder.features(x)).collect::<Result<Vec<_>>>()?;
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..feats.len() {
        for j in i + 1..feats.len() {
            let c = cosine_similarity(&feats[i], &feats[j])?;
            if labels[i] == labels[j] {
                within += c;
                nw += 1;
            } else {
                between += c;
                nb += 1;
            }
        }
    }
    Ok((within / nw.max(1) as f64, between / nb.max(1) as f64))
}

#[derive(Debug, Clone)]
pub struct MuOutcome {
    pub model: Classifier,
    pub memory: MemoryBank,
    pub trace: StageTrace,
}

/// Fine-tuning on single-annotation entries with cross-entropy plus the
/// memory regularizer and the unimodal penalty, weighted per `ablation`.
///
/// `entries` is reshuffled in place at the start of every epoch with `rng`.
pub fn train_mu(
    mut model: Classifier,
    entries: &mut [SplitEntry],
    data: &Prepared,
    hp: &HyperParams,
    ablation: Ablation,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<MuOutcome> {
    let classes = data.classes();
    let mut adam = Adam::new(hp.learning_rate, hp.lr_decay);
    let mut feed = InputFeed::new(&data.train_x, hp.feature_jitter, seed, 2);
    let mut bank = MemoryBank::new(classes, hp.memory_momentum)?;
    let mut centroids = ClassCentroids::new(classes, hp.centroid_ema);
    let alpha_reg = if ablation.memory_reg { hp.alpha_reg } else { 0.0 };
    let alpha_uni = if ablation.unimodal { hp.alpha_uni } else { 0.0 };
    let mut trace = StageTrace::new(Stage::Mu);

    for epoch in 0..hp.mu_epochs {
        rng.shuffle(entries);
        let mut sums = EpochRecord {
            epoch,
            lr: adam.lr(epoch),
            ..EpochRecord::default()
        };
        let mut latest: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for batch in entries.chunks(hp.batch_size) {
            let xs = feed.batch(batch.iter().map(|e| e.sample));
            let cache = model.forward_batch(&as_refs(&xs))?;
            let pseudo = if ablation.memory_reg {
                centroids.update(&batch_centroids(&cache.features, &cache.probs)?);
                Some(
                    cache
                        .features
                        .iter()
                        .map(|z| pseudo_label(z, &centroids, hp.temperature))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            let mut grads = Vec::with_capacity(batch.len());
            for (i, e) in batch.iter().enumerate() {
                let p = &cache.probs[i];
                let ce = ce_loss(p, &one_hot(e.label, classes))?;
                let reg = if ablation.memory_reg {
                    reg_loss(p, &bank.get(e.image_id), hp.reg_sign)?
                } else {
                    LossTerm::zero(classes)
                };
                let uni = if ablation.unimodal {
                    unimodal_loss(p, argmax_tiebreak(p)?)?
                } else {
                    LossTerm::zero(classes)
                };
                let b = mu_total_loss(&ce, &reg, &uni, alpha_reg, alpha_uni)?;
                sums.ce += b.ce;
                sums.reg += b.reg;
                sums.uni += b.uni;
                sums.total += b.total;
                grads.push(b.grad_logits);
            }
            if let Some(pseudo) = pseudo {
                for (e, q) in batch.iter().zip(pseudo) {
                    match hp.memory_cadence {
                        MemoryCadence::Iteration => bank.update(e.image_id, &q)?,
                        MemoryCadence::Epoch => {
                            latest.insert(e.image_id, q);
                        }
                    }
                }
            }
            scale_rows(&mut grads, 1.0 / batch.len() as f64);
            let g = model.backward(&cache, &grads, None)?;
            adam.step(&mut model, &g, epoch).map_err(|e| tag(e, "mu total"))?;
        }
        for (id, q) in latest {
            bank.update(id, &q)?;
        }
        bank.advance_epoch();
        let n = entries.len().max(1) as f64;
        for v in [&mut sums.ce, &mut sums.reg, &mut sums.uni, &mut sums.total] {
            *v /= n;
        }
        sums.val_accuracy = Some(validation_accuracy(&model, &data.val_x, &data.val_targets)?);
        trace.epochs.push(sums);
    }
    Ok(MuOutcome {
        model,
        memory: bank,
        trace,
    })
}

/// How the plain cross-entropy trainer labels its entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeLabels {
    /// Labels stay as given.
    Fixed,
    /// Each epoch every entry takes a freshly sampled annotation of its image.
    Resampled,
}

/// Plain cross-entropy training over `entries`, reshuffled every epoch.
pub fn train_ce(
    mut model: Classifier,
    entries: &mut [SplitEntry],
    labels: CeLabels,
    data: &Prepared,
    hp: &HyperParams,
    rng: &mut SeededRng,
    seed: u64,
) -> Result<(Classifier, StageTrace)> {
    let classes = data.classes();
    let mut adam = Adam::new(hp.learning_rate, hp.lr_decay);
    let mut feed = InputFeed::new(&data.train_x, hp.feature_jitter, seed, 2);
    let mut label_rng = SeededRng::new(seed, STREAM_LABEL_SAMPLING);
    let mut trace = StageTrace::new(Stage::Ce);
    for epoch in 0..hp.mu_epochs {
        if labels == CeLabels::Resampled {
            for e in entries.iter_mut() {
                e.label = proxy_label(&data.train.samples[e.sample].annotations, ProxyMode::Ls, &mut label_rng)?;
            }
        }
        rng.shuffle(entries);
        let mut loss_sum = 0.0;
        for batch in entries.chunks(hp.batch_size) {
            let xs = feed.batch(batch.iter().map(|e| e.sample));
            let cache = model.forward_batch(&as_refs(&xs))?;
            let mut grads = Vec::with_capacity(batch.len());
            for (i, e) in batch.iter().enumerate() {
                let t = ce_loss(&cache.probs[i], &one_hot(e.label, classes))?;
                loss_sum += t.value;
                grads.push(t.grad_logits);
            }
            scale_rows(&mut grads, 1.0 / batch.len() as f64);
            let g = model.backward(&cache, &grads, None)?;
            adam.step(&mut model, &g, epoch).map_err(|e| tag(e, "ce"))?;
        }
        let mean_loss = loss_sum / entries.len().max(1) as f64;
        trace.epochs.push(EpochRecord {
            epoch,
            lr: adam.lr(epoch),
            ce: mean_loss,
            total: mean_loss,
            val_accuracy: Some(validation_accuracy(&model, &data.val_x, &data.val_targets)?),
            ..EpochRecord::default()
        });
    }
    Ok((model, trace))
}

/// Test-set metrics for both tasks (3-class only when there are 5 grades),
/// plus the share of predictions with zero unimodal penalty at their mode.
pub fn evaluate(model: &Classifier, test: &Dataset, test_x: &[Vec<f64>]) -> Result<(Vec<TaskMetrics>, f64)> {
    let probs = predict_all(model, test_x)?;
    let preds = argmaxes(&probs)?;
    let targets: Vec<usize> = test.samples.iter().map(evaluation_target).collect();
    let classes = test.classes;
    let clean: Option<Vec<usize>> = test.samples.iter().map(|s| s.clean).collect();
    let mut first = task_metrics("5-class", &probs, &preds, &targets, classes)?;
    first.clean_accuracy = clean.as_ref().map(|c| accuracy(&preds, c)).transpose()?;
    let mut tasks = vec![first];
    if classes == 5 {
        let p3 = probs.iter().map(|p| map_probs_3class(p)).collect::<Result<Vec<_>>>()?;
        let pred3 = argmaxes(&p3)?;
        let t3 = to_3class(&targets)?;
        let mut m3 = task_metrics("3-class", &p3, &pred3, &t3, 3)?;
        m3.clean_accuracy = match &clean {
            Some(c) => Some(accuracy(&pred3, &to_3class(c)?)?),
            None => None,
        };
        tasks.push(m3);
    }
    let mut unimodal = 0usize;
    for (p, &k) in probs.iter().zip(&preds) {
        if unimodal_loss(p, k)?.value == 0.0 {
            unimodal += 1;
        }
    }
    Ok((tasks, unimodal as f64 / probs.len() as f64))
}

fn to_3class(labels: &[usize]) -> Result<Vec<usize>> {
    labels.iter().map(|&t| map_3class(t)).collect()
}

fn task_metrics(name: &str, probs: &[Vec<f64>], preds: &[usize], targets: &[usize], classes: usize) -> Result<TaskMetrics> {
    let auc = macro_auc(probs, targets, classes)?;
    Ok(TaskMetrics {
        task: name.into(),
        classes,
        test_count: targets.len(),
        accuracy: accuracy(preds, targets)?,
        macro_f1: macro_f1(preds, targets, classes)?,
        macro_auc: auc.value,
        clean_accuracy: None,
        auc_skipped_classes: auc.skipped.iter().map(|k| k + 1).collect(),
        confusion: confusion_matrix(preds, targets, classes)?,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub train_report: TrainReport,
    pub model: Classifier,
}

/// One seed of one method, end to end.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let start = Instant::now();
    let hp = &config.hyper;
    let data = prepare_data(config, seed)?;
    let dims = data.dims(hp);
    let mut stages = Vec::new();
    let mut selection = None;
    let mut notes = Vec::new();
    let mut memory_size = 0;
    let mut shuffle = SeededRng::new(seed, STREAM_MU_SHUFFLE);

    let model = match config.method {
        Method::Url => {
            let ablation = config.ablation;
            let mut init = SeededRng::new(seed, STREAM_MU_INIT);
            let model = if ablation.contrastive {
                let nl = train_nl_warmup(&data, hp, seed)?;
                stages.push(nl.trace);
                let reliable = select_reliable(&nl.best_model, &data.train, &data.train_x, hp.reliable_size)?;
                let stats = reliable.stats(&data.train);
                if stats.shortfall.iter().any(|&s| s > 0) {
                    notes.push(format!("reliable-set shortfall per class: {:?}", stats.shortfall));
                }
                selection = Some(stats);
                let encoder = if hp.warm_start_scl {
                    nl.best_model.encoder.clone()
                } else {
                    Encoder::init(dims, hp.activation, &mut SeededRng::new(seed, STREAM_SCL_INIT))?
                };
                let (encoder, scl_trace) = train_scl(encoder, &reliable, &data.train_x, hp, seed)?;
                stages.push(scl_trace);
                Classifier::from_parts(encoder, Head::init(dims.feature, dims.classes, &mut init)?)?
            } else {
                Classifier::init(dims, hp.activation, &mut init)?
            };
            let mut entries = split_to_single_annotation(&data.train, &mut shuffle);
            let mu = train_mu(model, &mut entries, &data, hp, ablation, &mut shuffle, seed)?;
            memory_size = mu.memory.len();
            stages.push(mu.trace);
            mu.model
        }
        Method::CeMv | Method::CeSv | Method::Ave | Method::Ls => {
            let model = Classifier::init(dims, hp.activation, &mut SeededRng::new(seed, STREAM_MU_INIT))?;
            let (mut entries, labels) = match config.method {
                Method::Ave => (per_image_entries(&data.train, ave_label), CeLabels::Fixed),
                Method::Ls => (per_image_entries(&data.train, |a| a[0]), CeLabels::Resampled),
                _ => (split_to_single_annotation(&data.train, &mut shuffle), CeLabels::Fixed),
            };
            let (model, trace) = train_ce(model, &mut entries, labels, &data, hp, &mut shuffle, seed)?;
            stages.push(trace);
            model
        }
    };

    let (tasks, unimodal_fraction) = evaluate(&model, &data.test, &data.test_x)?;
    if let Some(w) = &data.split_warning {
        notes.push(w.clone());
    }
    let metrics = RunMetrics {
        seed,
        tasks,
        unimodal_fraction,
        selection: selection.clone(),
        notes,
    };
    let train_report = TrainReport {
        seed,
        method: config.method,
        stages,
        selection,
        split_warning: data.split_warning.clone(),
        memory_size,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: config.clone(),
    };
    Ok(RunOutcome {
        metrics,
        train_report,
        model,
    })
}

fn per_image_entries(ds: &Dataset, label: impl Fn(&[usize]) -> usize) -> Vec<SplitEntry> {
    ds.samples
        .iter()
        .enumerate()
        .map(|(i, s)| SplitEntry {
            image_id: s.id,
            sample: i,
            label: label(&s.annotations),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: MetricsReport,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentOutcome {
    /// Writes `report.json`, `report.csv`, and per-seed checkpoints and
    /// training traces into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        write_report(&self.report, &dir.join("report.json"))?;
        for run in &self.runs {
            let seed = run.metrics.seed;
            Checkpoint::new(run.model.clone(), None).write(&dir.join(format!("checkpoint_seed{seed}.json")))?;
            write_json(&run.train_report, &dir.join(format!("train_seed{seed}.json")))?;
        }
        Ok(())
    }
}

/// Runs every configured seed (in parallel threads) and aggregates the metrics.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let results: Vec<Result<RunOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(config, seed)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::numeric("run", "training thread panicked"))))
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_runs(config, runs.iter().map(|r| r.metrics.clone()).collect());
    Ok(ExperimentOutcome { report, runs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "-uni")]
    NoUni,
    #[serde(rename = "-uni-reg")]
    NoUniReg,
    #[serde(rename = "baseline")]
    Baseline,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant::Full,
        AblationVariant::NoUni,
        AblationVariant::NoUniReg,
        AblationVariant::Baseline,
    ];

    pub fn apply(self, base: &ExperimentConfig, view: ViewMode) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.hyper.view_mode = view;
        cfg.method = Method::Url;
        cfg.ablation = Ablation::default();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoUni => cfg.ablation.unimodal = false,
            AblationVariant::NoUniReg => {
                cfg.ablation.unimodal = false;
                cfg.ablation.memory_reg = false;
            }
            AblationVariant::Baseline => {
                cfg.method = Method::CeMv;
                cfg.ablation = Ablation::none();
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub view: ViewMode,
    pub variant: AblationVariant,
    pub report: MetricsReport,
}

/// Single/multi view × {full, −uni, −uni−reg, baseline}.
pub fn ablation_grid(base: &ExperimentConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for view in [ViewMode::Single, ViewMode::Multi] {
        for variant in AblationVariant::ALL {
            let cfg = variant.apply(base, view);
            let outcome = run_experiment(&cfg)?;
            rows.push(AblationRow {
                view,
                variant,
                report: outcome.report,
            });
        }
    }
    Ok(rows)
}

/// Flat CSV of the grid: header plus one line per row.
pub fn ablation_csv(rows: &[AblationRow]) -> Vec<String> {
    let mut out = vec!["view,variant,task,accuracy_mean,accuracy_std,macro_f1_mean,macro_auc_mean,unimodal_fraction_mean".to_string()];
    for r in rows {
        let view = if r.view == ViewMode::Single { "SV" } else { "MV" };
        let variant = serde_json::to_value(r.variant).ok();
        let variant = variant.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        if let Some(t) = r.report.task("5-class") {
            out.push(format!(
                "{view},{variant},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t.task,
                t.accuracy.mean,
                t.accuracy.std,
                t.macro_f1.mean,
                t.macro_auc.mean,
                r.report.unimodal_fraction.mean
            ));
        }
    }
    out
}
