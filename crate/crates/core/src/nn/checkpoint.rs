use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Versioned JSON container for a trained model.
///
/// Floats are written in shortest round-trip form and parsed exactly, so a
/// save/load cycle is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format_version: u32,
    pub kind: String,
    pub architecture: serde_json::Value,
    pub init_scheme: String,
    pub seed: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub model: M,
}

impl<M: Serialize + DeserializeOwned> Checkpoint<M> {
    pub fn new(kind: &str, architecture: serde_json::Value, init_scheme: &str, seed: u64, model: M) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            architecture,
            init_scheme: init_scheme.to_string(),
            seed,
            metadata: BTreeMap::new(),
            model,
        }
    }

    pub fn with_metadata(mut self, key: &str, value: serde_json::Value) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str, expected_kind: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                ck.format_version
            )));
        }
        if ck.kind != expected_kind {
            return Err(Error::Data(format!(
                "checkpoint holds a '{}' model, expected '{expected_kind}'",
                ck.kind
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected_kind: &str) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?, expected_kind)
    }
}
