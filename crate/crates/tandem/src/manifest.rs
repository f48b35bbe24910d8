//! Run manifests and self-contained model checkpoints.
//!
//! A run manifest records the resolved configuration, data checksums,
//! seed, and toolkit version. Its hash is computed over everything
//! except the timestamp, so re-running a command byte-identically
//! reproduces every artifact that embeds the hash.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::{load_checkpoint, save_checkpoint, ParamSet};
use crate::tokenize::{DpMode, SrlSetting, SubwordModel};
use crate::trainer::{TrainConfig, TrainSetup, TrainTask, Vocabularies};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub command: String,
    pub seed: u64,
    pub resolved_config: serde_json::Value,
    pub data_checksums: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    /// Wall-clock timestamp; the only non-reproducible field, excluded
    /// from the manifest hash.
    pub created_at: u64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, resolved_config: serde_json::Value) -> Self {
        RunManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            resolved_config,
            data_checksums: BTreeMap::new(),
            checkpoint_hash: None,
            created_at: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn add_checksum(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        self.data_checksums
            .insert(p.display().to_string(), sha256_file(p)?);
        Ok(())
    }

    /// Content hash over every field except `created_at`.
    pub fn hash(&self) -> String {
        let mut clone = self.clone();
        clone.created_at = 0;
        let json = serde_json::to_vec(&clone).expect("manifest serializes");
        sha256_bytes(&json)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Everything a checkpoint needs to be loaded without its run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub toolkit_version: String,
    pub task: TrainTask,
    pub dp_mode: DpMode,
    pub srl_setting: SrlSetting,
    pub model: ModelConfig,
    pub dep_labels: Vec<String>,
    pub roles: Vec<String>,
    pub srl_predicate_segment: bool,
    /// The subword model, embedded in its text-file form.
    pub subwords_text: String,
    pub train_config: TrainConfig,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    /// Hash of the run manifest that produced this checkpoint.
    pub run_manifest_hash: String,
}

impl CheckpointManifest {
    pub fn from_setup(
        setup: &TrainSetup,
        task: TrainTask,
        train_config: &TrainConfig,
        best_epoch: usize,
        best_metric: Option<f64>,
        run_manifest_hash: String,
    ) -> Self {
        CheckpointManifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            task,
            dp_mode: setup.dp_mode,
            srl_setting: setup.srl_setting,
            model: setup.model_cfg.clone(),
            dep_labels: setup.vocab.dep_labels.clone(),
            roles: setup.vocab.roles.clone(),
            srl_predicate_segment: setup.srl_predicate_segment,
            subwords_text: setup.vocab.subwords.to_text(),
            train_config: train_config.clone(),
            best_epoch,
            best_metric,
            run_manifest_hash,
        }
    }

    /// Reconstruct the setup this checkpoint was trained with.
    pub fn to_setup(&self) -> Result<TrainSetup> {
        let subwords = SubwordModel::parse(&self.subwords_text, "checkpoint manifest")?;
        Ok(TrainSetup {
            model_cfg: self.model.clone(),
            vocab: Vocabularies {
                subwords,
                dep_labels: self.dep_labels.clone(),
                roles: self.roles.clone(),
            },
            dp_mode: self.dp_mode,
            srl_setting: self.srl_setting,
            srl_predicate_segment: self.srl_predicate_segment,
        })
    }
}

pub fn save_model_checkpoint(
    path: impl AsRef<Path>,
    manifest: &CheckpointManifest,
    params: &ParamSet,
) -> Result<()> {
    let value = serde_json::to_value(manifest)
        .map_err(|e| Error::config(format!("checkpoint manifest serialization: {e}")))?;
    save_checkpoint(path, &value, params)
}

pub fn load_model_checkpoint(
    path: impl AsRef<Path>,
) -> Result<(CheckpointManifest, ParamSet)> {
    let path = path.as_ref();
    let (value, params) = load_checkpoint(path)?;
    let manifest: CheckpointManifest = serde_json::from_value(value).map_err(|e| {
        Error::validation(format!(
            "{}: checkpoint manifest does not match this toolkit: {e}",
            path.display()
        ))
    })?;
    Ok((manifest, params))
}
