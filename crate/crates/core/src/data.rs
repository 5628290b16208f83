//! Multi-annotator ordinal datasets: the synthetic generator, annotation
//! algebra and CSV ingestion.
//!
//! Class labels are stored 0-based; the CSV format and reports use 1-based
//! grades.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{DenseMatrix, SeededRng, PROB_TOL};

pub const MAX_ANNOTATIONS: usize = 4;

/// Class counts of a five-grade training set used to shape the default prior.
pub const DEFAULT_CLASS_COUNTS: [f64; 5] = [400.0, 1140.0, 1476.0, 708.0, 370.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: u64,
    pub views: Vec<Vec<f64>>,
    /// 0-based class per annotation; between 1 and 4 entries.
    pub annotations: Vec<usize>,
    /// Ground truth, only known for synthetic data and never used for training.
    pub clean: Option<usize>,
}

impl LabeledSample {
    pub fn or_label(&self, classes: usize) -> Vec<f64> {
        or_label(&self.annotations, classes)
    }

    /// The shared label when at least two annotations exist and all agree.
    pub fn consensus(&self) -> Option<usize> {
        let first = *self.annotations.first()?;
        (self.annotations.len() >= 2 && self.annotations.iter().all(|&a| a == first)).then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub classes: usize,
    pub view_count: usize,
    pub view_dim: usize,
    pub samples: Vec<LabeledSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.view_count == 0 || self.view_dim == 0 {
            return Err(Error::Schema("dataset needs >= 2 classes and non-empty views".into()));
        }
        for s in &self.samples {
            if s.views.len() != self.view_count || s.views.iter().any(|v| v.len() != self.view_dim) {
                return Err(Error::Schema(format!("sample {} has inconsistent views", s.id)));
            }
            if s.annotations.is_empty() || s.annotations.len() > MAX_ANNOTATIONS {
                return Err(Error::Schema(format!(
                    "sample {} has {} annotations (1..={MAX_ANNOTATIONS} allowed)",
                    s.id,
                    s.annotations.len()
                )));
            }
            if s.annotations.iter().chain(s.clean.iter()).any(|&a| a >= self.classes) {
                return Err(Error::Schema(format!("sample {} has a label outside 1..={}", s.id, self.classes)));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            classes: self.classes,
            view_count: self.view_count,
            view_dim: self.view_dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn total_annotations(&self) -> usize {
        self.samples.iter().map(|s| s.annotations.len()).sum()
    }

    /// Fraction of individual annotations equal to the hidden clean label.
    pub fn annotation_agreement(&self) -> Option<f64> {
        let mut agree = 0usize;
        let mut total = 0usize;
        for s in &self.samples {
            let clean = s.clean?;
            total += s.annotations.len();
            agree += s.annotations.iter().filter(|&&a| a == clean).count();
        }
        (total > 0).then(|| agree as f64 / total as f64)
    }

    /// Model inputs for every sample under the given view mode.
    pub fn inputs(&self, mode: ViewMode) -> Result<Vec<Vec<f64>>> {
        concat_batch(&self.samples, mode)
    }
}

/// Discretized-Gaussian confusion model of one annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorModel {
    pub sigma: f64,
    pub confusion: DenseMatrix,
}

impl AnnotatorModel {
    /// Row `c`, entry `k` ∝ `exp(−(k − c)² / (2σ²))`.
    pub fn discretized_gaussian(classes: usize, sigma: f64) -> Result<Self> {
        if classes == 0 || !(sigma > 0.0) {
            return Err(Error::invalid("annotator needs classes >= 1 and sigma > 0"));
        }
        let mut values = Vec::with_capacity(classes * classes);
        for c in 0..classes {
            let row: Vec<f64> = (0..classes)
                .map(|k| {
                    let d = k as f64 - c as f64;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .collect();
            let total: f64 = row.iter().sum();
            values.extend(row.into_iter().map(|v| v / total));
        }
        Ok(AnnotatorModel {
            sigma,
            confusion: DenseMatrix::from_vec(classes, classes, values)?,
        })
    }

    pub fn row(&self, clean: usize) -> &[f64] {
        self.confusion.row(clean)
    }

    pub fn annotate(&self, clean: usize, rng: &mut SeededRng) -> usize {
        rng.categorical(self.row(clean))
    }
}

/// One independent draw per annotator from its confusion row for `clean`.
pub fn simulate_annotations(clean: usize, annotators: &[AnnotatorModel], rng: &mut SeededRng) -> Result<Vec<usize>> {
    if annotators.is_empty() {
        return Err(Error::invalid("at least one annotator is required"));
    }
    Ok(annotators.iter().map(|a| a.annotate(clean, rng)).collect())
}

fn default_prior() -> Vec<f64> {
    let total: f64 = DEFAULT_CLASS_COUNTS.iter().sum();
    DEFAULT_CLASS_COUNTS.iter().map(|c| c / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub classes: usize,
    pub class_prior: Vec<f64>,
    pub latent_dim: usize,
    /// Distance between consecutive class means along the ordinal direction.
    pub class_spacing: f64,
    pub view_count: usize,
    pub view_dim: usize,
    pub view_noise: f64,
    /// Use one projection for all views instead of one per view.
    pub shared_projection: bool,
    pub annotators_min: usize,
    pub annotators_max: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_samples: 2000,
            classes: 5,
            class_prior: default_prior(),
            latent_dim: 8,
            class_spacing: 5.5,
            view_count: 3,
            view_dim: 4,
            view_noise: 1.0,
            shared_projection: false,
            annotators_min: 1,
            annotators_max: 4,
            sigma_min: 1.0,
            sigma_max: 1.0,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if self.n_samples == 0 || self.classes < 2 || self.latent_dim == 0 || self.view_count == 0 || self.view_dim == 0 {
            return bad("counts must be positive (classes >= 2)");
        }
        if self.class_prior.len() != self.classes {
            return bad("class_prior length must equal classes");
        }
        if self.class_prior.iter().any(|&p| !(p >= 0.0)) || (self.class_prior.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return bad("class_prior must be non-negative and sum to 1");
        }
        if self.annotators_min == 0 || self.annotators_min > self.annotators_max || self.annotators_max > MAX_ANNOTATIONS {
            return bad("annotator count range must satisfy 1 <= min <= max <= 4");
        }
        if !(self.sigma_min > 0.0) || self.sigma_min > self.sigma_max {
            return bad("annotator sigma range must satisfy 0 < min <= max");
        }
        if !(self.view_noise >= 0.0) || !(self.class_spacing > 0.0) {
            return bad("view_noise must be >= 0 and class_spacing > 0");
        }
        Ok(())
    }
}

/// Fixed geometry and annotator pool from which samples are drawn.
///
/// Samples use one random stream per id, so any subset of ids can be drawn
/// independently and reproducibly.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    cfg: GeneratorConfig,
    direction: Vec<f64>,
    projections: Vec<DenseMatrix>,
    annotators: Vec<AnnotatorModel>,
}

impl SyntheticWorld {
    pub fn new(cfg: &GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::new(cfg.seed, 0);
        let raw: Vec<f64> = (0..cfg.latent_dim).map(|_| rng.normal()).collect();
        let direction = crate::numcore::l2_normalize(&raw)?;
        let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
        let draw_projection = |rng: &mut SeededRng| {
            let values = (0..cfg.view_dim * cfg.latent_dim).map(|_| scale * rng.normal()).collect();
            DenseMatrix::from_vec(cfg.view_dim, cfg.latent_dim, values)
        };
        let projections = if cfg.shared_projection {
            let p = draw_projection(&mut rng)?;
            vec![p; cfg.view_count]
        } else {
            (0..cfg.view_count).map(|_| draw_projection(&mut rng)).collect::<Result<_>>()?
        };
        let annotators = (0..cfg.annotators_max)
            .map(|_| {
                let sigma = rng.uniform_range(cfg.sigma_min, cfg.sigma_max);
                AnnotatorModel::discretized_gaussian(cfg.classes, sigma)
            })
            .collect::<Result<_>>()?;
        Ok(SyntheticWorld {
            cfg: cfg.clone(),
            direction,
            projections,
            annotators,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn annotators(&self) -> &[AnnotatorModel] {
        &self.annotators
    }

    /// Latent class mean; classes sit at equal steps along the ordinal
    /// direction, centered on the middle grade.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let offset = (class as f64 - (self.cfg.classes as f64 - 1.0) / 2.0) * self.cfg.class_spacing;
        self.direction.iter().map(|u| offset * u).collect()
    }

    /// Maps a latent vector to views, drawing view noise from `rng`.
    pub fn project(&self, latent: &[f64], rng: &mut SeededRng) -> Vec<Vec<f64>> {
        self.projections
            .iter()
            .map(|p| {
                let mut v = p.mul_vec(latent);
                if self.cfg.view_noise > 0.0 {
                    v.iter_mut().for_each(|x| *x += self.cfg.view_noise * rng.normal());
                }
                v
            })
            .collect()
    }

    pub fn sample(&self, id: u64, annotator_range: (usize, usize)) -> LabeledSample {
        let mut rng = SeededRng::new(self.cfg.seed, id.wrapping_add(1));
        let clean = rng.categorical(&self.cfg.class_prior);
        let mut latent = self.class_mean(clean);
        latent.iter_mut().for_each(|x| *x += rng.normal());
        let views = self.project(&latent, &mut rng);
        let (lo, hi) = annotator_range;
        let count = lo + rng.below(hi - lo + 1);
        let mut pool: Vec<usize> = (0..self.annotators.len()).collect();
        rng.shuffle(&mut pool);
        let annotations = pool[..count]
            .iter()
            .map(|&a| self.annotators[a].annotate(clean, &mut rng))
            .collect();
        LabeledSample {
            id,
            views,
            annotations,
            clean: Some(clean),
        }
    }

    fn empty_dataset(&self) -> Dataset {
        Dataset {
            classes: self.cfg.classes,
            view_count: self.cfg.view_count,
            view_dim: self.cfg.view_dim,
            samples: Vec::new(),
        }
    }

    /// Samples with ids `0..n_samples`.
    pub fn training_set(&self) -> Dataset {
        let range = (self.cfg.annotators_min, self.cfg.annotators_max);
        let mut ds = self.empty_dataset();
        ds.samples = (0..self.cfg.n_samples as u64).map(|id| self.sample(id, range)).collect();
        ds
    }

    /// `n` samples whose annotations come from at least two annotators and
    /// all agree, drawn from ids starting at `first_id`.
    pub fn consensus_set(&self, n: usize, first_id: u64) -> Dataset {
        let range = (self.cfg.annotators_min.max(2), self.cfg.annotators_max.max(2));
        let mut ds = self.empty_dataset();
        let mut id = first_id;
        while ds.samples.len() < n {
            let s = self.sample(id, range);
            if s.consensus().is_some() {
                ds.samples.push(s);
            }
            id += 1;
        }
        ds
    }
}

pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Dataset> {
    Ok(SyntheticWorld::new(cfg)?.training_set())
}

/// Id offset for held-out samples so they never collide with training ids.
pub const TEST_ID_OFFSET: u64 = 1 << 32;

/// Training set plus a consensus-labelled test set from the same world.
pub fn generate_benchmark(cfg: &GeneratorConfig, n_test: usize) -> Result<(Dataset, Dataset)> {
    let world = SyntheticWorld::new(cfg)?;
    Ok((world.training_set(), world.consensus_set(n_test, TEST_ID_OFFSET)))
}

/// Elementwise OR of the one-hot annotations.
pub fn or_label(annotations: &[usize], classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    for &a in annotations {
        y[a] = 1.0;
    }
    y
}

/// One entry of the single-annotation training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitEntry {
    pub image_id: u64,
    /// Index of the source sample in its dataset.
    pub sample: usize,
    pub label: usize,
}

/// One entry per (image, annotation) pair, shuffled.
pub fn split_to_single_annotation(dataset: &Dataset, rng: &mut SeededRng) -> Vec<SplitEntry> {
    let mut entries: Vec<SplitEntry> = dataset
        .samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.annotations.iter().map(move |&label| SplitEntry {
                image_id: s.id,
                sample: i,
                label,
            })
        })
        .collect();
    rng.shuffle(&mut entries);
    entries
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ProxyMode {
    /// Rounded mean grade, halves rounded away from zero.
    Ave,
    /// Uniformly sampled annotation.
    Ls,
}

pub fn proxy_label(annotations: &[usize], mode: ProxyMode, rng: &mut SeededRng) -> Result<usize> {
    if annotations.is_empty() {
        return Err(Error::invalid("proxy label of zero annotations"));
    }
    Ok(match mode {
        ProxyMode::Ave => {
            let mean_grade = annotations.iter().map(|&a| (a + 1) as f64).sum::<f64>() / annotations.len() as f64;
            mean_grade.round() as usize - 1
        }
        ProxyMode::Ls => annotations[rng.below(annotations.len())],
    })
}

pub fn ave_label(annotations: &[usize]) -> usize {
    // AVE never touches the rng
    proxy_label(annotations, ProxyMode::Ave, &mut SeededRng::new(0, 0)).expect("non-empty annotations")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ViewMode {
    /// First view only.
    #[serde(rename = "SV")]
    Single,
    #[default]
    #[serde(rename = "MV")]
    Multi,
}

impl ViewMode {
    pub fn from_count(views: usize) -> Result<Self> {
        match views {
            1 => Ok(ViewMode::Single),
            3 => Ok(ViewMode::Multi),
            n => Err(Error::Config(format!("--views must be 1 or 3, got {n}"))),
        }
    }

    pub fn input_dim(self, view_count: usize, view_dim: usize) -> usize {
        match self {
            ViewMode::Single => view_dim,
            ViewMode::Multi => view_count * view_dim,
        }
    }
}

/// Concatenates views in their stored order.
pub fn concat_views(views: &[Vec<f64>]) -> Result<Vec<f64>> {
    if views.is_empty() {
        return Err(Error::invalid("a sample needs at least one view"));
    }
    Ok(views.concat())
}

pub fn concat_batch(samples: &[LabeledSample], mode: ViewMode) -> Result<Vec<Vec<f64>>> {
    let Some(first) = samples.first() else {
        return Ok(Vec::new());
    };
    let count = first.views.len();
    samples
        .iter()
        .map(|s| {
            if s.views.len() != count {
                return Err(Error::invalid(format!(
                    "sample {} has {} views, batch has {count}",
                    s.id,
                    s.views.len()
                )));
            }
            match mode {
                ViewMode::Single => Ok(s.views[0].clone()),
                ViewMode::Multi => concat_views(&s.views),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitInfo {
    pub stratified: bool,
    pub warning: Option<String>,
}

/// Image-level split stratified by AVE proxy class.
pub fn train_val_split(dataset: &Dataset, fraction: f64, rng: &mut SeededRng) -> Result<(Dataset, Dataset, SplitInfo)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        strata.entry(ave_label(&s.annotations)).or_default().push(i);
    }
    let quota = |n: usize| (fraction * n as f64).round() as usize;
    let too_small = strata.values().find(|idx| {
        let q = quota(idx.len());
        q == 0 || q == idx.len()
    });

    let mut val = Vec::new();
    let mut train = Vec::new();
    let info = if let Some(small) = too_small {
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        rng.shuffle(&mut all);
        let q = quota(all.len());
        val.extend_from_slice(&all[..q]);
        train.extend_from_slice(&all[q..]);
        SplitInfo {
            stratified: false,
            warning: Some(format!(
                "a proxy-label stratum of {} samples is too small to split; used an unstratified split",
                small.len()
            )),
        }
    } else {
        for idx in strata.values() {
            let mut idx = idx.clone();
            rng.shuffle(&mut idx);
            let q = quota(idx.len());
            val.extend_from_slice(&idx[..q]);
            train.extend_from_slice(&idx[q..]);
        }
        SplitInfo {
            stratified: true,
            warning: None,
        }
    };
    train.sort_unstable();
    val.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&val), info))
}

fn header(view_count: usize, view_dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "view_count".into(), "dim_per_view".into()];
    h.extend((0..view_count * view_dim).map(|k| format!("f_{k}")));
    h.extend((1..=MAX_ANNOTATIONS).map(|j| format!("a_{j}")));
    h.push("clean".into());
    h
}

/// Writes the dataset CSV (1-based grades, 17 significant digits).
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header(dataset.view_count, dataset.view_dim)).map_err(csv_err)?;
    for s in &dataset.samples {
        let mut rec = vec![s.id.to_string(), dataset.view_count.to_string(), dataset.view_dim.to_string()];
        rec.extend(s.views.iter().flatten().map(|v| format!("{v:.16e}")));
        rec.extend((0..MAX_ANNOTATIONS).map(|j| s.annotations.get(j).map_or(String::new(), |a| (a + 1).to_string())));
        rec.push(s.clean.map_or(String::new(), |c| (c + 1).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_csv(path: &Path, classes: usize) -> Result<Dataset> {
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_slice());
    let cols: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let n_features = cols.iter().filter(|c| c.starts_with("f_")).count();
    let expected = header(1, n_features);
    // view count is only known from the rows; compare names independent of it
    for name in &expected {
        if !cols.contains(name) {
            return Err(Error::Schema(format!("{}: missing column {name:?}", path.display())));
        }
    }
    if cols != expected {
        return Err(Error::Schema(format!(
            "{}: columns must be {}",
            path.display(),
            expected.join(",")
        )));
    }

    let mut samples = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if rec.len() != cols.len() {
            return Err(parse_err(format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let int = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| parse_err(format!("column {} is not an integer: {:?}", cols[k], &rec[k])))
        };
        let id: u64 = rec[0].parse().map_err(|_| parse_err(format!("bad id {:?}", &rec[0])))?;
        let (vc, vd) = (int(1)?, int(2)?);
        if vc == 0 || vd == 0 || vc * vd != n_features {
            return Err(Error::Schema(format!(
                "{}:{line}: view_count {vc} × dim_per_view {vd} does not match {n_features} feature columns",
                path.display()
            )));
        }
        match shape {
            None => shape = Some((vc, vd)),
            Some(s) if s != (vc, vd) => {
                return Err(Error::Schema(format!("{}:{line}: view shape differs from earlier rows", path.display())))
            }
            _ => {}
        }
        let features = (0..n_features)
            .map(|k| {
                let v: f64 = rec[3 + k]
                    .parse()
                    .map_err(|_| parse_err(format!("f_{k} is not a number: {:?}", &rec[3 + k])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(format!("f_{k} is not finite")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let grade = |k: usize| -> Result<Option<usize>> {
            if rec[k].is_empty() {
                return Ok(None);
            }
            let g = int(k)?;
            if g == 0 || g > classes {
                return Err(parse_err(format!("{} = {g} outside 1..={classes}", cols[k])));
            }
            Ok(Some(g - 1))
        };
        let ann_start = 3 + n_features;
        let annotations = (0..MAX_ANNOTATIONS)
            .map(|j| grade(ann_start + j))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect::<Vec<_>>();
        if annotations.is_empty() {
            return Err(parse_err("row has no annotations".into()));
        }
        let clean = grade(ann_start + MAX_ANNOTATIONS)?;
        samples.push(LabeledSample {
            id,
            views: features.chunks(vd).map(<[f64]>::to_vec).collect(),
            annotations,
            clean,
        });
    }
    let (view_count, view_dim) = shape.unwrap_or((1, n_features.max(1)));
    let ds = Dataset {
        classes,
        view_count,
        view_dim,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn rows_stochastic(model: &AnnotatorModel) -> bool {
    model
        .confusion
        .iter_rows()
        .all(|r| (r.iter().sum::<f64>() - 1.0).abs() <= PROB_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            n_samples: 200,
            seed: 5,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn prior_frequencies_match_default() {
        let cfg = GeneratorConfig {
            n_samples: 10_000,
            ..GeneratorConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let mut counts = [0usize; 5];
        for s in &ds.samples {
            counts[s.clean.unwrap()] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let freq = c as f64 / 10_000.0;
            assert!((freq - cfg.class_prior[k]).abs() < 0.03, "class {k}: {freq}");
        }
    }

    #[test]
    fn noise_free_shared_projection_gives_equal_views() {
        let cfg = GeneratorConfig {
            view_noise: 0.0,
            shared_projection: true,
            ..small_cfg()
        };
        for s in generate_synthetic(&cfg).unwrap().samples {
            assert_eq!(s.views[0], s.views[1]);
            assert_eq!(s.views[1], s.views[2]);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_synthetic(&small_cfg()).unwrap(), generate_synthetic(&small_cfg()).unwrap());
        let other = GeneratorConfig { seed: 6, ..small_cfg() };
        assert_ne!(generate_synthetic(&small_cfg()).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn class_means_ordered_along_direction() {
        let world = SyntheticWorld::new(&small_cfg()).unwrap();
        let proj: Vec<f64> = (0..5)
            .map(|c| crate::numcore::dot(&world.class_mean(c), world.direction()))
            .collect();
        assert!(proj.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn annotator_rows_stochastic_and_unimodal() {
        for step in 0..=100 {
            let sigma = 0.01 + step as f64 * (5.0 - 0.01) / 100.0;
            let m = AnnotatorModel::discretized_gaussian(5, sigma).unwrap();
            assert!(rows_stochastic(&m));
            for c in 0..5 {
                let r = m.row(c);
                assert!((0..c).all(|k| r[k] <= r[k + 1]));
                assert!((c..4).all(|k| r[k + 1] <= r[k]));
            }
        }
    }

    #[test]
    fn sharp_annotator_is_almost_always_right() {
        let a = AnnotatorModel::discretized_gaussian(5, 0.01).unwrap();
        let mut rng = SeededRng::new(1, 1);
        let agree = (0..10_000).filter(|_| a.annotate(2, &mut rng) == 2).count();
        assert!(agree as f64 / 10_000.0 > 0.999);
    }

    #[test]
    fn annotation_frequencies_match_row() {
        let a = AnnotatorModel::discretized_gaussian(5, 1.0).unwrap();
        let row: Vec<f64> = (0..5).map(|k| (-((k as f64 - 1.0).powi(2)) / 2.0).exp()).collect();
        let z: f64 = row.iter().sum();
        let mut rng = SeededRng::new(2, 9);
        let mut counts = [0usize; 5];
        for _ in 0..100_000 {
            counts[simulate_annotations(1, std::slice::from_ref(&a), &mut rng).unwrap()[0]] += 1;
        }
        for k in 0..5 {
            assert!((counts[k] as f64 / 100_000.0 - row[k] / z).abs() < 0.02);
        }
        assert!(simulate_annotations(1, &[], &mut rng).is_err());
    }

    #[test]
    fn or_label_examples() {
        assert_eq!(or_label(&[2, 3, 4], 5), vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(or_label(&[1], 5), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(or_label(&[1, 1], 5), or_label(&[1], 5));
    }

    #[test]
    fn split_counts_and_ids() {
        let mut ds = generate_synthetic(&small_cfg()).unwrap();
        ds.samples.truncate(3);
        ds.samples[0].annotations = vec![0];
        ds.samples[1].annotations = vec![1, 2];
        ds.samples[2].annotations = vec![0, 1, 3, 4];
        let entries = split_to_single_annotation(&ds, &mut SeededRng::new(0, 0));
        assert_eq!(entries.len(), 7);
        for e in &entries {
            assert_eq!(ds.samples[e.sample].id, e.image_id);
        }

        for s in &mut ds.samples {
            s.annotations.truncate(1);
        }
        let mut entries = split_to_single_annotation(&ds, &mut SeededRng::new(0, 0));
        entries.sort_by_key(|e| e.sample);
        let labels: Vec<usize> = entries.iter().map(|e| e.label).collect();
        assert_eq!(labels, ds.samples.iter().map(|s| s.annotations[0]).collect::<Vec<_>>());
    }

    #[test]
    fn proxy_label_examples() {
        assert_eq!(ave_label(&[2, 3, 4]), 3);
        assert_eq!(ave_label(&[2, 3]), 3);
        let mut rng = SeededRng::new(4, 4);
        let twos = (0..10_000)
            .filter(|_| proxy_label(&[1, 1, 4], ProxyMode::Ls, &mut rng).unwrap() == 1)
            .count();
        assert!((twos as f64 / 10_000.0 - 2.0 / 3.0).abs() < 0.02);
        assert!(proxy_label(&[], ProxyMode::Ave, &mut rng).is_err());
    }

    #[test]
    fn concat_examples() {
        let views = vec![vec![1.0; 4], vec![2.0; 4], vec![3.0; 4]];
        assert_eq!(concat_views(&views).unwrap().len(), 12);
        assert_eq!(concat_views(&views[..1]).unwrap(), views[0]);
        let swapped = vec![views[1].clone(), views[0].clone(), views[2].clone()];
        assert_ne!(concat_views(&views).unwrap(), concat_views(&swapped).unwrap());
        assert!(concat_views(&[]).is_err());

        let mut ds = generate_synthetic(&small_cfg()).unwrap();
        ds.samples[1].views.pop();
        assert!(matches!(concat_batch(&ds.samples[..2], ViewMode::Multi), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn validation_split_partitions_images() {
        let cfg = GeneratorConfig {
            n_samples: 2000,
            ..GeneratorConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let (tr, va, info) = train_val_split(&ds, 0.2, &mut SeededRng::new(1, 2)).unwrap();
        assert!(info.stratified);
        assert!((va.len() as i64 - 400).abs() <= 5);
        assert_eq!(tr.len() + va.len(), 2000);
        let ids: std::collections::BTreeSet<u64> = tr.samples.iter().map(|s| s.id).collect();
        assert!(va.samples.iter().all(|s| !ids.contains(&s.id)));
        let (tr2, va2, _) = train_val_split(&ds, 0.2, &mut SeededRng::new(1, 2)).unwrap();
        assert_eq!((tr, va), (tr2, va2));
    }

    #[test]
    fn tiny_stratum_falls_back_with_warning() {
        let mut ds = generate_synthetic(&small_cfg()).unwrap();
        ds.samples.truncate(20);
        for s in &mut ds.samples {
            s.annotations = vec![2];
        }
        ds.samples[0].annotations = vec![0];
        let (tr, va, info) = train_val_split(&ds, 0.2, &mut SeededRng::new(0, 0)).unwrap();
        assert!(!info.stratified);
        assert!(info.warning.is_some());
        assert_eq!((tr.len(), va.len()), (16, 4));
    }

    #[test]
    fn consensus_set_has_agreeing_multi_annotations() {
        let world = SyntheticWorld::new(&small_cfg()).unwrap();
        let test = world.consensus_set(50, TEST_ID_OFFSET);
        assert_eq!(test.len(), 50);
        assert!(test.samples.iter().all(|s| s.consensus().is_some() && s.id >= TEST_ID_OFFSET));
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d/train.csv");
        write_csv(&ds, &path).unwrap();
        assert_eq!(load_csv(&path, 5).unwrap(), ds);
    }

    #[test]
    fn csv_rejects_rows_without_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            "id,view_count,dim_per_view,f_0,f_1,a_1,a_2,a_3,a_4,clean\n\
             0,1,2,0.5,0.25,3,,,,3\n\
             1,1,2,0.5,0.25,,,,,\n",
        )
        .unwrap();
        match load_csv(&path, 5) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_header_mismatch_names_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "id,view_count,dim_per_view,f_0,a_1,a_2,a_3,clean\n0,1,1,0.5,1,,,\n").unwrap();
        match load_csv(&path, 5) {
            Err(Error::Schema(msg)) => assert!(msg.contains("a_4"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn csv_inconsistent_dims_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(
            &path,
            "id,view_count,dim_per_view,f_0,f_1,a_1,a_2,a_3,a_4,clean\n0,3,1,0.5,0.25,1,,,,\n",
        )
        .unwrap();
        assert!(matches!(load_csv(&path, 5), Err(Error::Schema(_))));
    }

    proptest! {
        #[test]
        fn split_count_identity(counts in prop::collection::vec(1usize..=4, 1..40), seed in 0u64..1000) {
            let mut ds = generate_synthetic(&GeneratorConfig { n_samples: counts.len(), seed, ..GeneratorConfig::default() }).unwrap();
            for (s, &c) in ds.samples.iter_mut().zip(&counts) {
                s.annotations = vec![0; c];
            }
            let entries = split_to_single_annotation(&ds, &mut SeededRng::new(seed, 0));
            prop_assert_eq!(entries.len(), counts.iter().sum::<usize>());
        }

        #[test]
        fn or_label_is_order_free_and_idempotent(a in prop::collection::vec(0usize..5, 1..6), b in prop::collection::vec(0usize..5, 1..6)) {
            let ab: Vec<usize> = a.iter().chain(&b).copied().collect();
            let ba: Vec<usize> = b.iter().chain(&a).copied().collect();
            prop_assert_eq!(or_label(&ab, 5), or_label(&ba, 5));
            let aa: Vec<usize> = a.iter().chain(&a).copied().collect();
            prop_assert_eq!(or_label(&aa, 5), or_label(&a, 5));
            let or_of_ors: Vec<f64> = or_label(&a, 5).iter().zip(or_label(&b, 5)).map(|(x, y)| x.max(y)).collect();
            prop_assert_eq!(or_label(&ab, 5), or_of_ors);
        }
    }
}
