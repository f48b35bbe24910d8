//! Evaluation reports: per-run metric maps, multi-seed aggregation with
//! mean ± sample standard deviation, and the ablation comparison table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::dp::DpEval;
use crate::model::srl::{LabelScore, SrlEval};

/// Metrics for one task/setting on one data set.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub task: String,
    pub setting: String,
    pub split: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_label: BTreeMap<String, LabelScore>,
    pub n_sentences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

impl EvalReport {
    pub fn from_dp(eval: &DpEval, setting: &str, split: &str) -> Self {
        let mut metrics = BTreeMap::new();
        metrics.insert("uas".to_string(), eval.uas);
        metrics.insert("las".to_string(), eval.las);
        metrics.insert("root".to_string(), eval.root_acc);
        metrics.insert(
            "cycle_sentences".to_string(),
            eval.cycle_sentences as f64,
        );
        EvalReport {
            task: "dp".to_string(),
            setting: setting.to_string(),
            split: split.to_string(),
            metrics,
            per_label: BTreeMap::new(),
            n_sentences: eval.n_sentences,
            manifest_hash: None,
        }
    }

    pub fn from_srl(eval: &SrlEval, setting: &str, split: &str, n_sentences: usize) -> Self {
        let mut metrics = BTreeMap::new();
        metrics.insert("micro_precision".to_string(), eval.micro_precision);
        metrics.insert("micro_recall".to_string(), eval.micro_recall);
        metrics.insert("micro_f1".to_string(), eval.micro_f1);
        metrics.insert("macro_precision".to_string(), eval.macro_precision);
        metrics.insert("macro_recall".to_string(), eval.macro_recall);
        metrics.insert("macro_f1".to_string(), eval.macro_f1);
        metrics.insert("identification_f1".to_string(), eval.identification_f1);
        metrics.insert("classification_acc".to_string(), eval.classification_acc);
        EvalReport {
            task: "srl".to_string(),
            setting: setting.to_string(),
            split: split.to_string(),
            metrics,
            per_label: eval.per_label.clone(),
            n_sentences,
            manifest_hash: None,
        }
    }

    /// Comparable means: same task, setting, split, and metric keys.
    pub fn comparable(&self, other: &EvalReport) -> std::result::Result<(), Vec<String>> {
        let mut mismatched = Vec::new();
        if self.task != other.task {
            mismatched.push(format!("task ({} vs {})", self.task, other.task));
        }
        if self.setting != other.setting {
            mismatched.push(format!("setting ({} vs {})", self.setting, other.setting));
        }
        if self.split != other.split {
            mismatched.push(format!("split ({} vs {})", self.split, other.split));
        }
        let a: Vec<&String> = self.metrics.keys().collect();
        let b: Vec<&String> = other.metrics.keys().collect();
        if a != b {
            mismatched.push("metric keys".to_string());
        }
        if mismatched.is_empty() {
            Ok(())
        } else {
            Err(mismatched)
        }
    }
}

/// Scores are reported in the 0-100 range with two decimals.
pub fn format_score(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.2}(±{:.2})", mean * 100.0, std * 100.0)
}

pub fn format_with_delta(score: f64, delta: f64) -> String {
    format!("{:.2}({:+.2})", score * 100.0, delta * 100.0)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); 0 for a single run.
    pub std: f64,
    pub formatted: String,
}

/// Multi-seed aggregate of comparable reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateReport {
    pub task: String,
    pub setting: String,
    pub split: String,
    pub n_runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::validation("cannot aggregate zero reports"))?;
    for r in &reports[1..] {
        if let Err(fields) = first.comparable(r) {
            return Err(Error::validation(format!(
                "reports are not comparable; mismatched fields: {}",
                fields.join(", ")
            )));
        }
    }
    let n = reports.len();
    let mut metrics = BTreeMap::new();
    for key in first.metrics.keys() {
        let values: Vec<f64> = reports.iter().map(|r| r.metrics[key]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        metrics.insert(
            key.clone(),
            MeanStd {
                mean,
                std,
                formatted: format_mean_std(mean, std),
            },
        );
    }
    Ok(AggregateReport {
        task: first.task.clone(),
        setting: first.setting.clone(),
        split: first.split.clone(),
        n_runs: n,
        metrics,
    })
}

/// Side-by-side comparison CSV: the first run is the baseline with plain
/// scores, later rows carry the score and its signed delta.
pub fn ablation_table(runs: &[(String, EvalReport)]) -> Result<String> {
    if runs.len() < 2 {
        return Err(Error::validation(
            "ablation comparison needs at least two completed runs",
        ));
    }
    let (_, base) = &runs[0];
    for (name, r) in &runs[1..] {
        if let Err(fields) = base.comparable(r) {
            return Err(Error::validation(format!(
                "run {name} is not comparable to the baseline; mismatched fields: {}",
                fields.join(", ")
            )));
        }
    }
    let keys: Vec<&String> = base
        .metrics
        .keys()
        .filter(|k| !k.ends_with("_sentences"))
        .collect();
    let mut out = String::from("run");
    for k in &keys {
        out.push(',');
        out.push_str(k);
    }
    out.push('\n');
    for (i, (name, report)) in runs.iter().enumerate() {
        out.push_str(name);
        for k in &keys {
            let score = report.metrics[*k];
            out.push(',');
            if i == 0 {
                out.push_str(&format_score(score));
            } else {
                out.push_str(&format_with_delta(score, score - base.metrics[*k]));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Per-label metric table as CSV.
pub fn per_label_csv(report: &EvalReport, manifest_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = manifest_hash {
        out.push_str(&format!("# manifest_hash = {h}\n"));
    }
    out.push_str("label,precision,recall,f1,tp,fp,fn\n");
    for (label, s) in &report.per_label {
        out.push_str(&format!(
            "{label},{:.6},{:.6},{:.6},{},{},{}\n",
            s.precision, s.recall, s.f1, s.tp, s.fp, s.fn_
        ));
    }
    out
}
