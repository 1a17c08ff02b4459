use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowModel, Parity};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "annealflow-flow";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing serialized flow. Parameters are stored as JSON numbers,
/// which round-trip `f64` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowCheckpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub hidden: usize,
    pub parities: Vec<Parity>,
    pub params: Vec<f64>,
}

impl From<&FlowModel> for FlowCheckpoint {
    fn from(model: &FlowModel) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dim: model.dim,
            hidden: model.hidden,
            parities: model.layers.iter().map(|l| l.parity).collect(),
            params: model.params.clone(),
        }
    }
}

impl FlowCheckpoint {
    pub fn into_model(self) -> Result<FlowModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        FlowModel::with_layout(self.dim, self.hidden, &self.parities, Some(self.params))
    }
}

impl FlowModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&FlowCheckpoint::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<FlowCheckpoint>(text)?.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
