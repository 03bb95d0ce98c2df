use std::path::{Path, PathBuf};

use meshnet::model::{Ablation, Aggregation, ModelConfig};
use meshnet::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a training run needs. Loaded from JSON, then overridden by
/// flags. `model` may be omitted; the default architecture is then sized
/// to the data's class count.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Ablation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
    pub train: TrainConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// The model for `classes` categories with the ablation and aggregation
    /// overrides applied.
    pub fn model_config(&self, classes: usize) -> Result<ModelConfig, CliError> {
        let mut c = match &self.model {
            Some(m) if m.num_classes != classes => {
                return Err(CliError::Config(format!(
                    "model has {} classes but the data has {classes}",
                    m.num_classes
                )))
            }
            Some(m) => m.clone(),
            None => ModelConfig::standard(classes),
        };
        if let Some(a) = self.ablation {
            c = c.with_ablation(a);
        }
        if let Some(a) = self.aggregation {
            c = c.with_aggregation(a);
        }
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    /// Referenced paths must exist; the training config must be valid.
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(d) = &self.data {
            if !d.is_dir() {
                return Err(CliError::Config(format!(
                    "data directory {} does not exist",
                    d.display()
                )));
            }
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}
