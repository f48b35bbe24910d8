//! The declarative run configuration file (TOML). Commands read one
//! config and apply flag overrides on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tokenize::{DpMode, SrlSetting};
use crate::trainer::hpo::{PruningConfig, SearchSpace};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dp_train: Option<PathBuf>,
    pub dp_dev: Option<PathBuf>,
    pub dp_test: Option<PathBuf>,
    pub srl_train: Option<PathBuf>,
    pub srl_dev: Option<PathBuf>,
    pub srl_test: Option<PathBuf>,
    pub subwords: Option<PathBuf>,
}

/// Encoder and head dimensions; vocabulary size and max length are
/// resolved at run time from the subword model and train config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    /// Defaults to `hidden_dim`.
    pub dp_dim: Option<usize>,
    /// Defaults to `hidden_dim`.
    pub mlp_hidden: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            embed_dim: 64,
            hidden_dim: 128,
            encoder_layers: 2,
            dp_dim: None,
            mlp_hidden: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSection {
    pub dp_mode: DpMode,
    pub srl_setting: SrlSetting,
}

impl Default for TaskSection {
    fn default() -> Self {
        TaskSection {
            dp_mode: DpMode::RootUnknown,
            srl_setting: SrlSetting::Morpheme,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub no_srl_predicate: bool,
    pub no_dp_predicate: bool,
    pub no_bpe: bool,
    pub no_bilstm: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HpoSection {
    pub n_trials: usize,
    /// Reduced epochs for DP-only trials.
    pub epochs_dp: usize,
    /// Reduced epochs for SRL-bearing trials.
    pub epochs_srl: usize,
    pub max_tokens: usize,
    pub pruning: PruningConfig,
    pub space: SearchSpace,
}

impl Default for HpoSection {
    fn default() -> Self {
        HpoSection {
            n_trials: 50,
            epochs_dp: 3,
            epochs_srl: 10,
            max_tokens: 270,
            pruning: PruningConfig::default(),
            space: SearchSpace::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub task: TaskSection,
    pub ablation: AblationSection,
    pub hpo: HpoSection,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.hpo.space.validate()?;
        if self.model.embed_dim == 0 || self.model.hidden_dim == 0 || self.model.encoder_layers == 0
        {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.model.hidden_dim % 2 != 0 {
            return Err(Error::config(format!(
                "hidden_dim must be even, got {}",
                self.model.hidden_dim
            )));
        }
        Ok(())
    }

    /// Effective DP input mode: the DP-predicate ablation strips the
    /// second segment, which is exactly the root-unknown input.
    pub fn effective_dp_mode(&self) -> DpMode {
        if self.ablation.no_dp_predicate {
            DpMode::RootUnknown
        } else {
            self.task.dp_mode
        }
    }

    /// Build the model dimensions for the given inventory sizes.
    pub fn model_config(&self, vocab_size: usize, n_dep_labels: usize, n_srl_tags: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_tokens: self.train.max_tokens,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            encoder_layers: self.model.encoder_layers,
            dp_dim: self.model.dp_dim.unwrap_or(self.model.hidden_dim),
            n_dep_labels: n_dep_labels.max(1),
            n_srl_tags: n_srl_tags.max(1),
            mlp_hidden: self.model.mlp_hidden.unwrap_or(self.model.hidden_dim),
            use_srl_bilstm: !self.ablation.no_bilstm,
            gamma_bert: self.train.gamma_bert,
            gamma_dp: self.train.gamma_dp,
            gamma_lstm: self.train.gamma_lstm,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_validate() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.max_tokens, 320);
        assert_eq!(cfg.hpo.max_tokens, 270);
        assert_eq!(cfg.hpo.epochs_dp, 3);
        assert_eq!(cfg.hpo.epochs_srl, 10);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
[data]
dp_train = "dp.train.conllu"
srl_train = "srl.train.jsonl"
subwords = "subwords.txt"

[model]
embed_dim = 32
hidden_dim = 64
encoder_layers = 1

[train]
eta = 0.001
beta_srl = 0.72
lambda_dp = 0.0107
epochs = 3
seed = 5
target_metric = "micro_f1"

[task]
dp_mode = "root_known"
srl_setting = "span_given"

[ablation]
no_bpe = true

[hpo]
n_trials = 5

[[hpo.space]]
name = "eta"
scale = "logarithmic"
low = 1e-5
high = 1e-3
"#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.task.dp_mode, DpMode::RootKnown);
        assert_eq!(cfg.task.srl_setting, SrlSetting::SpanGiven);
        assert!(cfg.ablation.no_bpe);
        assert_eq!(cfg.hpo.space.params.len(), 1);
        assert!((cfg.train.beta_srl - 0.72).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<RunConfig>("[train]\nlearning_rate = 0.1\n");
        assert!(err.is_err());
    }

    #[test]
    fn dp_predicate_ablation_forces_root_unknown() {
        let mut cfg = RunConfig::default();
        cfg.task.dp_mode = DpMode::RootKnown;
        cfg.ablation.no_dp_predicate = true;
        assert_eq!(cfg.effective_dp_mode(), DpMode::RootUnknown);
    }
}
