use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::geometry::SamplerConfig;
use crate::objective::LossConfig;
use crate::trainer::{RunConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Built-in scene name or path of a scene TOML file.
    pub name: String,
    pub train_views: usize,
    pub eval_views: usize,
    pub width: u32,
    pub height: u32,
    pub rig: String,
    pub seed: u64,
    pub fov_deg: f64,
    pub near: f64,
    pub far: f64,
    pub radius: f64,
    pub n_quadrature: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            train_views: 30,
            eval_views: 5,
            width: 64,
            height: 64,
            rig: "orbit".into(),
            seed: 0,
            fov_deg: 45.0,
            near: 0.5,
            far: 6.0,
            radius: 3.0,
            n_quadrature: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Write a loss row every this many steps.
    pub log_every: usize,
    /// Save held-out renders at the end of training.
    pub write_renders: bool,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            log_every: 1,
            write_renders: true,
        }
    }
}

/// The full configuration file. Every section and key is optional; unknown
/// keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub scene: SceneConfig,
    pub sampling: SamplerConfig,
    pub field: FieldConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub io: IoConfig,
}

impl CliConfig {
    /// The sections the trainer consumes.
    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            field: self.field.clone(),
            sampling: self.sampling.clone(),
            loss: self.loss.clone(),
            train: self.train.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: CliConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.run_config().validate()
    }
}
