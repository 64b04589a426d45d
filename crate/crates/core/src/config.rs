//! Run configuration: built-in defaults overridden by a TOML file.
//!
//! ```toml
//! init_std = 0.05
//!
//! [model]
//! d = 32
//! layers = 1
//!
//! [train]
//! learning_rate = 5e-3
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::intent::GroupingConfig;
use crate::micg::GraphBuildConfig;
use crate::retrieval::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Standard deviation of the normal parameter initializer.
    pub init_std: f64,
    /// Documents returned per query by `retrieve`.
    pub retrieve_k: usize,
    pub grouping: GroupingConfig,
    pub graph: GraphBuildConfig,
    /// `vocab_size` doubles as the target size when a vocabulary is trained.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            init_std: 0.02,
            retrieve_k: 100,
            grouping: GroupingConfig::default(),
            graph: GraphBuildConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.init_std > 0.0) {
            return Err(Error::InvalidConfig("init_std must be positive".into()));
        }
        self.grouping.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.graph.k != self.model.k {
            return Err(Error::InvalidConfig(format!(
                "graph.k ({}) and model.k ({}) must agree",
                self.graph.k, self.model.k
            )));
        }
        Ok(())
    }
}
