//! Checkpoint files.
//!
//! Policies are stored as [`PolicyFile`] JSON. Training checkpoints wrap a
//! [`TrainerState`] (policy, stage-start snapshot, schedule position and
//! generator state) in a versioned envelope. Writes go through a temporary
//! file and a rename.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::TrainerState;
use crate::policy::{PolicyError, PolicyFile, ToyPolicy};

pub const CHECKPOINT_FORMAT: &str = "comm-rl.checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} is not a valid checkpoint: {reason}")]
    Invalid { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCheckpoint {
    pub format: String,
    pub version: u32,
    pub state: TrainerState,
}

impl TrainingCheckpoint {
    pub fn new(state: TrainerState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            state,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.display().to_string(), source }
}

fn invalid(path: &Path, reason: impl ToString) -> CheckpointError {
    CheckpointError::Invalid {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| invalid(path, e))?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| invalid(path, e))
}

pub fn save_policy(path: &Path, policy: &ToyPolicy) -> Result<(), CheckpointError> {
    write_json(path, &PolicyFile::from(policy))
}

/// Loads a policy from a policy file or from the policy inside a training
/// checkpoint.
pub fn load_policy(path: &Path) -> Result<ToyPolicy, CheckpointError> {
    let value: serde_json::Value = read_json(path)?;
    let file: PolicyFile = if value.get("format").and_then(|f| f.as_str()) == Some(CHECKPOINT_FORMAT) {
        load_training_value(path, value)?.state.policy
    } else {
        serde_json::from_value(value).map_err(|e| invalid(path, e))?
    };
    ToyPolicy::try_from(file).map_err(|e: PolicyError| invalid(path, e))
}

pub fn save_training(path: &Path, state: &TrainerState) -> Result<(), CheckpointError> {
    write_json(path, &TrainingCheckpoint::new(state.clone()))
}

fn load_training_value(path: &Path, value: serde_json::Value) -> Result<TrainingCheckpoint, CheckpointError> {
    let ckpt: TrainingCheckpoint = serde_json::from_value(value).map_err(|e| invalid(path, e))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(invalid(path, format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
    }
    Ok(ckpt)
}

pub fn load_training(path: &Path) -> Result<TrainingCheckpoint, CheckpointError> {
    let value = read_json(path)?;
    load_training_value(path, value)
}
