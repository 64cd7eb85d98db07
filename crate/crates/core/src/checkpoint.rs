//! JSON checkpoints for policies and reward models.
//!
//! Floats are written with shortest round-trip formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub version: u32,
    /// `"policy"` or `"reward_model"`.
    pub kind: String,
    /// Digest of the feature map the model was trained against.
    pub feature_hash: String,
    pub model: M,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn new(kind: &str, feature_hash: String, model: M) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            kind: kind.to_string(),
            feature_hash,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::State(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fails unless the checkpoint was produced against `expected`.
    pub fn check_features(&self, expected: &str) -> Result<()> {
        if self.feature_hash != expected {
            return Err(Error::State(format!(
                "checkpoint built for feature map {}, current map is {expected}",
                self.feature_hash
            )));
        }
        Ok(())
    }
}
