//! Seeded random hyperparameter search with median pruning: a trial stops
//! early when its validation metric at an epoch falls below the running
//! median of completed trials at the same epoch.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SplitCorpus;
use crate::error::{Error, Result};
use crate::trainer::{run_training, TrainConfig, TrainSetup, TrainTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Logarithmic,
}

/// One searchable hyperparameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParam {
    pub name: String,
    pub scale: Scale,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub params: Vec<SearchParam>,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for p in &self.params {
            if !(p.low < p.high) {
                return Err(Error::config(format!(
                    "search space for {}: low {} must be below high {}",
                    p.name, p.low, p.high
                )));
            }
            if p.scale == Scale::Logarithmic && p.low <= 0.0 {
                return Err(Error::config(format!(
                    "logarithmic search space for {} requires low > 0, got {}",
                    p.name, p.low
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    pub enabled: bool,
    /// Epochs that always run before pruning applies.
    pub warmup_epochs: usize,
    /// Completed trials required before pruning applies.
    pub min_completed: usize,
}

impl Default for PruningConfig {
    fn default() -> Self {
        PruningConfig {
            enabled: true,
            warmup_epochs: 1,
            min_completed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub sampled: BTreeMap<String, f64>,
    pub epoch_metrics: Vec<f64>,
    pub pruned: bool,
    pub pruned_at_epoch: Option<usize>,
    /// Best validation metric the trial reached before stopping.
    pub final_metric: f64,
    /// Best metric over the full run when a pruned trial was forced to
    /// completion (test mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forced_final_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HpoOutcome {
    pub best_trial: usize,
    pub best_metric: f64,
    pub best_config: TrainConfig,
    pub trials: Vec<TrialRecord>,
}

fn apply_sample(cfg: &mut TrainConfig, name: &str, value: f64) -> Result<()> {
    match name {
        "eta" => cfg.eta = value,
        "gamma_bert" => cfg.gamma_bert = value,
        "gamma_dp" => cfg.gamma_dp = value,
        "gamma_lstm" => cfg.gamma_lstm = value,
        "lambda_dp" => cfg.lambda_dp = value,
        "beta_srl" => cfg.beta_srl = value,
        other => {
            return Err(Error::config(format!(
                "unknown hyperparameter `{other}` in search space"
            )))
        }
    }
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Random search: `n_trials` seeded samples, uniform in the linear or log
/// domain, trained with the reduced-epoch config and pruned against the
/// running median. `force_complete_pruned` records what pruned trials
/// would have reached, for auditing the pruning rule.
#[allow(clippy::too_many_arguments)]
pub fn hpo_search(
    setup: &TrainSetup,
    base_cfg: &TrainConfig,
    task: TrainTask,
    space: &SearchSpace,
    n_trials: usize,
    pruning: &PruningConfig,
    dp: Option<&SplitCorpus>,
    srl: Option<&SplitCorpus>,
    force_complete_pruned: bool,
) -> Result<HpoOutcome> {
    if n_trials == 0 {
        return Err(Error::config("hpo needs at least one trial"));
    }
    space.validate()?;
    let mut sample_rng = ChaCha8Rng::seed_from_u64(base_cfg.seed ^ 0x4850_4f53);

    // completed trials' metric per epoch index (0-based)
    let mut completed_at_epoch: Vec<Vec<f64>> = Vec::new();
    let mut trials: Vec<TrialRecord> = Vec::new();
    let mut best: Option<(usize, f64, TrainConfig)> = None;

    for trial in 0..n_trials {
        let mut cfg = base_cfg.clone();
        let mut sampled = BTreeMap::new();
        for p in &space.params {
            let u: f64 = sample_rng.gen();
            let value = match p.scale {
                Scale::Linear => p.low + u * (p.high - p.low),
                Scale::Logarithmic => (p.low.ln() + u * (p.high.ln() - p.low.ln())).exp(),
            };
            apply_sample(&mut cfg, &p.name, value)?;
            sampled.insert(p.name.clone(), value);
        }
        cfg.validate()?;

        let best_final_so_far = best.as_ref().map(|(_, m, _)| *m);
        let mut epoch_metrics: Vec<f64> = Vec::new();
        let mut pruned_at: Option<usize> = None;
        let mut hook = |epoch: usize, val: f64| -> bool {
            epoch_metrics.push(val);
            if !pruning.enabled || pruned_at.is_some() {
                return true;
            }
            if epoch <= pruning.warmup_epochs {
                return true;
            }
            let peers: Vec<f64> = completed_at_epoch
                .get(epoch - 1)
                .cloned()
                .unwrap_or_default();
            if peers.len() < pruning.min_completed {
                return true;
            }
            let mut peers = peers;
            let med = median(&mut peers);
            let trial_best = epoch_metrics
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            // never prune a trial that currently leads the search
            let leads = best_final_so_far.map_or(true, |b| trial_best >= b);
            if val < med && !leads {
                pruned_at = Some(epoch);
                if force_complete_pruned {
                    return true; // keep training, record the would-be result
                }
                return false;
            }
            true
        };

        let outcome = run_training(
            setup,
            &cfg,
            task,
            dp.map(|d| d.train.as_slice()),
            dp.map(|d| d.dev.as_slice()),
            srl.map(|s| s.train.as_slice()),
            srl.map(|s| s.dev.as_slice()),
            Some(&mut hook),
        )?;

        let pruned = pruned_at.is_some();
        let metric_until = |upto: usize| -> f64 {
            epoch_metrics[..upto.min(epoch_metrics.len())]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let final_metric = match pruned_at {
            Some(e) => metric_until(e),
            None => metric_until(epoch_metrics.len()),
        };
        let forced_final_metric = if pruned && force_complete_pruned {
            Some(metric_until(epoch_metrics.len()))
        } else {
            None
        };
        let _ = outcome;

        if !pruned {
            for (i, &m) in epoch_metrics.iter().enumerate() {
                if completed_at_epoch.len() <= i {
                    completed_at_epoch.push(Vec::new());
                }
                completed_at_epoch[i].push(m);
            }
            let is_better = best
                .as_ref()
                .map_or(true, |(_, m, _)| final_metric > *m);
            if is_better {
                best = Some((trial, final_metric, cfg.clone()));
            }
        }

        trials.push(TrialRecord {
            trial,
            sampled,
            epoch_metrics,
            pruned,
            pruned_at_epoch: pruned_at,
            final_metric,
            forced_final_metric,
        });
    }

    let (best_trial, best_metric, best_config) = best.ok_or_else(|| {
        Error::config("every trial was pruned; loosen pruning or add warmup epochs")
    })?;
    Ok(HpoOutcome {
        best_trial,
        best_metric,
        best_config,
        trials,
    })
}

/// Trial log as JSONL, one record per line, reproducible byte-for-byte
/// for a fixed seed.
pub fn trial_log_jsonl(trials: &[TrialRecord]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&serde_json::to_string(t).expect("trial record serializes"));
        out.push('\n');
    }
    out
}
