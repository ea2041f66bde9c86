//! Safetensors checkpoints with a JSON metadata record.
//!
//! Tensor names are `encoder.*` and `head.*` for trainable weights and
//! `anchor.*` for the frozen ER anchor encoder. Values are stored at the
//! model's precision, so a save/load round trip is bit-exact.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::{Architecture, MetaphorModel, ModelConfig, ModelError};

pub const CHECKPOINT_FORMAT: &str = "metaphor-er/1";
const META_KEY: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub fold: Option<usize>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub vocab_hash: String,
}

pub fn save_checkpoint(model: &MetaphorModel, meta: &CheckpointMeta, path: &Path) -> Result<(), ModelError> {
    if meta.config != *model.config() {
        return Err(ModelError::Checkpoint("metadata config differs from the model".into()));
    }
    let mut tensors: Vec<(String, Tensor)> = model.trainable_tensors().into_iter().collect();
    if let Some(anchor) = model.anchor_tensors() {
        tensors.extend(anchor.iter().map(|(k, t)| (format!("anchor.{k}"), t.clone())));
    }
    let json = serde_json::to_string(meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let metadata: HashMap<String, String> = [(META_KEY.to_string(), json)].into();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    safetensors::serialize_to_file(tensors, Some(metadata), path)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))
}

fn read(path: &Path) -> Result<(CheckpointMeta, BTreeMap<String, Tensor>), ModelError> {
    let bytes = std::fs::read(path)?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| ModelError::Checkpoint(format!("{} has no checkpoint metadata", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(ModelError::VersionMismatch {
            expected: CHECKPOINT_FORMAT.into(),
            found: meta.format,
        });
    }
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok((meta, tensors.into_iter().collect()))
}

pub fn load_checkpoint(path: &Path) -> Result<(MetaphorModel, CheckpointMeta), ModelError> {
    let (meta, tensors) = read(path)?;
    let mut trainable = BTreeMap::new();
    let mut anchor = BTreeMap::new();
    for (k, t) in tensors {
        match k.strip_prefix("anchor.") {
            Some(rest) => {
                anchor.insert(rest.to_string(), t);
            }
            None => {
                trainable.insert(k, t);
            }
        }
    }
    let anchor = (!anchor.is_empty()).then_some(anchor);
    let model = MetaphorModel::from_parts(meta.config.clone(), &trainable, anchor)?;
    Ok((model, meta))
}

/// Loads and refuses a checkpoint of the wrong architecture.
pub fn load_checkpoint_as(path: &Path, expected: Architecture) -> Result<(MetaphorModel, CheckpointMeta), ModelError> {
    let (model, meta) = load_checkpoint(path)?;
    if model.architecture() != expected {
        return Err(ModelError::ArchitectureMismatch {
            expected,
            found: model.architecture(),
        });
    }
    Ok((model, meta))
}
