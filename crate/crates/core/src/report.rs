//! Persisted evaluation output: a versioned JSON document plus a flat CSV of
//! per-run metrics.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Ablation, ExperimentConfig, Method};
use crate::error::{Error, Result};
use crate::numcore::{mean, sample_std};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        MeanStd {
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    /// `"5-class"` or `"3-class"`.
    pub task: String,
    pub classes: usize,
    pub test_count: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
    /// Accuracy against hidden clean labels, when every test sample has one.
    pub clean_accuracy: Option<f64>,
    /// 1-based classes excluded from the AUC average.
    pub auc_skipped_classes: Vec<usize>,
    /// Rows are targets, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    pub quota_per_class: usize,
    pub per_class_counts: Vec<usize>,
    pub shortfall: Vec<usize>,
    /// Fraction of the reliable set whose predicted label equals the hidden clean label.
    pub purity: Option<f64>,
    /// Fraction of all individual training annotations equal to the clean label.
    pub annotation_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub tasks: Vec<TaskMetrics>,
    /// Fraction of test predictions with zero unimodal penalty at their own argmax.
    pub unimodal_fraction: f64,
    pub selection: Option<SelectionStats>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: String,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub macro_auc: MeanStd,
}

/// Fixed metric conventions, recorded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub class_indices: String,
    pub f1: String,
    pub auc: String,
    pub three_class_mapping: String,
    pub test_targets: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            class_indices: "1-based grades".into(),
            f1: "macro (unweighted mean over all classes)".into(),
            auc: "macro one-vs-rest rank statistic; classes without positives skipped".into(),
            three_class_mapping: "benign={1,2}, unsure={3}, malignant={4,5}; probabilities summed".into(),
            test_targets: "unanimous multi-annotator label".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub method: Method,
    pub ablation: Ablation,
    pub conventions: Conventions,
    pub config: ExperimentConfig,
    pub runs: Vec<RunMetrics>,
    pub summary: Vec<TaskSummary>,
    pub unimodal_fraction: MeanStd,
}

impl MetricsReport {
    pub fn from_runs(config: &ExperimentConfig, runs: Vec<RunMetrics>) -> Self {
        let tasks: Vec<String> = runs
            .first()
            .map(|r| r.tasks.iter().map(|t| t.task.clone()).collect())
            .unwrap_or_default();
        let summary = tasks
            .iter()
            .enumerate()
            .map(|(i, task)| {
                let pick = |f: fn(&TaskMetrics) -> f64| -> Vec<f64> { runs.iter().map(|r| f(&r.tasks[i])).collect() };
                TaskSummary {
                    task: task.clone(),
                    accuracy: MeanStd::of(&pick(|t| t.accuracy)),
                    macro_f1: MeanStd::of(&pick(|t| t.macro_f1)),
                    macro_auc: MeanStd::of(&pick(|t| t.macro_auc)),
                }
            })
            .collect();
        let uni: Vec<f64> = runs.iter().map(|r| r.unimodal_fraction).collect();
        MetricsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            method: config.method,
            ablation: config.ablation,
            conventions: Conventions::default(),
            config: config.clone(),
            runs,
            summary,
            unimodal_fraction: MeanStd::of(&uni),
        }
    }

    pub fn task(&self, name: &str) -> Option<&TaskSummary> {
        self.summary.iter().find(|s| s.task == name)
    }

    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = vec!["seed,task,accuracy,macro_f1,macro_auc,unimodal_fraction".to_string()];
        for r in &self.runs {
            for t in &r.tasks {
                rows.push(format!(
                    "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                    r.seed, t.task, t.accuracy, t.macro_f1, t.macro_auc, r.unimodal_fraction
                ));
            }
        }
        rows
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// CSV companion of a report path (`report.json` → `report.csv`).
pub fn csv_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

/// Writes the JSON report at `path` and its per-run CSV next to it.
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(report).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    let csv = csv_path(path);
    let mut f = fs::File::create(&csv).map_err(|e| Error::io(&csv, e))?;
    for row in report.csv_rows() {
        writeln!(f, "{row}").map_err(|e| Error::io(&csv, e))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: MetricsReport = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Schema(format!("report schema version {} is not supported", report.schema_version)));
    }
    Ok(report)
}

/// Writes any serializable value as pretty JSON, creating parent directories.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
