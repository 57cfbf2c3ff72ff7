//! Run configurations. Every document rejects unknown keys.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use nnrnn_core::memory::FmcConfig;
use nnrnn_core::optim::TrainConfig;
use nnrnn_core::rnn::{Activation, CellKind};
use nnrnn_core::schur::InitScheme;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Copy {
        delay: usize,
    },
    CharLm {
        /// Relative paths resolve against the config file's directory.
        corpus: PathBuf,
        window: usize,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub hidden_size: usize,
    /// Defaults to the task's customary scheme.
    #[serde(default)]
    pub init: Option<InitScheme>,
    /// Defaults to modReLU for the nnRNN and tanh for the vanilla cell.
    #[serde(default)]
    pub activation: Option<Activation>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmcSweepConfig {
    pub configs: Vec<FmcConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientsConfig {
    pub configs: Vec<FmcConfig>,
    pub n_samples: usize,
    pub t_max: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropsConfig {
    pub prop1: Prop1Grid,
    pub prop2: Prop2Grid,
    pub growth: GrowthGrid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prop1Grid {
    pub samples: usize,
    pub n_max: usize,
    pub alphas: Vec<f64>,
    pub seed: u64,
}

impl Default for Prop1Grid {
    fn default() -> Self {
        Prop1Grid {
            samples: 200,
            n_max: 12,
            alphas: vec![0.9, 1.0, 1.1],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prop2Grid {
    pub n_max: usize,
    pub t_max: usize,
}

impl Default for Prop2Grid {
    fn default() -> Self {
        Prop2Grid {
            n_max: 8,
            t_max: 30,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthGrid {
    pub seed: u64,
    pub t_max: usize,
}

impl Default for GrowthGrid {
    fn default() -> Self {
        GrowthGrid {
            seed: 0,
            t_max: nnrnn_core::propcheck::GROWTH_SUITE_HORIZON,
        }
    }
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn resolve_relative(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    config_path
        .parent()
        .map_or_else(|| p.to_path_buf(), |dir| dir.join(p))
}
