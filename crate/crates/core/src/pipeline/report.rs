use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result, TrainingLog};
use crate::config::ModelKind;
use crate::metrics::{mean_sd, EvaluationReport, TTest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub report: EvaluationReport,
    /// Kept out of `report.json` because it carries wall-clock times.
    #[serde(skip)]
    pub log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub no_knowledge: bool,
    /// Metric name to (mean, sample standard deviation) over folds.
    pub aggregate: BTreeMap<String, (f64, f64)>,
    pub folds: Vec<FoldResult>,
}

fn metric(r: &EvaluationReport, name: &str) -> Option<f64> {
    match name {
        "auc" => r.auc,
        "f1" => r.f1,
        "accuracy" => r.accuracy,
        "codebleu" => r.codebleu,
        "dist1" => r.dist_n.get(&1).copied(),
        "dist2" => r.dist_n.get(&2).copied(),
        _ => None,
    }
}

pub const METRICS: [&str; 6] = ["auc", "f1", "accuracy", "codebleu", "dist1", "dist2"];

impl ModelSummary {
    pub fn from_folds(model: ModelKind, no_knowledge: bool, folds: Vec<FoldResult>) -> Self {
        let mut s = ModelSummary { model, no_knowledge, aggregate: BTreeMap::new(), folds };
        for m in METRICS {
            let v = s.per_fold(m);
            if !v.is_empty() {
                s.aggregate.insert(m.to_string(), mean_sd(&v));
            }
        }
        s
    }

    /// Per-fold values of `name`, skipping folds where it is undefined.
    pub fn per_fold(&self, name: &str) -> Vec<f64> {
        self.folds.iter().filter_map(|f| metric(&f.report, name)).collect()
    }

    pub fn label(&self) -> String {
        if self.no_knowledge && !self.model.is_baseline() {
            format!("{} (no knowledge)", self.model)
        } else {
            self.model.to_string()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: String,
    pub students: usize,
    pub models: Vec<ModelSummary>,
    /// Paired t-tests of the first model against the second, per metric.
    pub comparison: BTreeMap<String, TTest>,
    pub warnings: Vec<String>,
}

fn cell(agg: &BTreeMap<String, (f64, f64)>, m: &str) -> String {
    match agg.get(m) {
        Some((mean, sd)) => format!("{mean:.3} ± {sd:.3}"),
        None => "-".into(),
    }
}

/// Fixed-width table: AUC, F1 and accuracy, then CodeBLEU and Dist-1.
pub fn format_table(r: &ExperimentReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>15} {:>15} {:>15} | {:>15} {:>15}",
        "Model", "AUC", "F1", "Accuracy", "CodeBLEU", "Dist-1"
    );
    for m in &r.models {
        let a = &m.aggregate;
        let _ = writeln!(
            out,
            "{:<28} {:>15} {:>15} {:>15} | {:>15} {:>15}",
            m.label(),
            cell(a, "auc"),
            cell(a, "f1"),
            cell(a, "accuracy"),
            cell(a, "codebleu"),
            cell(a, "dist1")
        );
    }
    if !r.comparison.is_empty() {
        let _ = writeln!(out, "\npaired t-test ({} vs {}):", r.models[0].label(), r.models[1].label());
        for (k, t) in &r.comparison {
            let _ = writeln!(out, "  {k:<10} mean diff {:+.4}  t {:.3}  p {:.4}", t.mean_diff, t.t, t.p_value);
        }
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io { path: path.into(), source })
}

/// Writes `report.json`, `report.txt` and `train_log.jsonl` into `dir`.
pub fn write_outputs(dir: &Path, r: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io { path: dir.into(), source })?;
    write(&dir.join("report.json"), &(serde_json::to_string_pretty(r).expect("report serializes") + "\n"))?;
    write(&dir.join("report.txt"), &format_table(r))?;
    let mut lines = String::new();
    for m in &r.models {
        for f in &m.folds {
            for e in &f.log.epochs {
                let mut v = serde_json::to_value(e).expect("epoch serializes");
                v["model"] = serde_json::json!(m.model.as_str());
                v["fold"] = serde_json::json!(f.fold);
                v["seed"] = serde_json::json!(f.seed);
                v["best"] = serde_json::json!(e.epoch == f.log.best_epoch);
                lines.push_str(&v.to_string());
                lines.push('\n');
            }
        }
    }
    write(&dir.join("train_log.jsonl"), &lines)
}
