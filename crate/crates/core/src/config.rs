//! Run configuration shared by the command-line interface and the tests.
//!
//! One JSON file configures every stage. Each section maps onto one module's
//! config struct, every field has a default, and unknown keys are rejected
//! with the offending location. Command-line flags override file values,
//! which override the built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cam::CamConfig;
use crate::engine::EngineConfig;
use crate::error::{CoreError, Result};
use crate::evalbench::{EvalConfig, SyntheticSpec};
use crate::training::{FitConfig, TrainerConfig};

/// Input file locations. Outputs always live under the command's output
/// directory and are not configured here.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Knowledge graph triples (TSV or JSONL).
    pub kg: Option<PathBuf>,
    /// Pre-computed embeddings; hash-seeded embeddings are used when absent.
    pub embeddings: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Engine parameters (all three modules) from a previous run.
    pub model_checkpoint: Option<PathBuf>,
    /// Hop classifier parameters from `train-cam`.
    pub cam_checkpoint: Option<PathBuf>,
}

/// Complete run configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub engine: EngineConfig,
    pub trainer: TrainerConfig,
    pub fit: FitConfig,
    pub eval: EvalConfig,
    pub synthetic: SyntheticSpec,
    pub cam: CamConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    /// Validates every section, independent of which command will run.
    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.trainer.weights.validate()?;
        self.eval.validate()?;
        self.fit.eval.validate()?;
        self.synthetic.validate()?;
        self.cam.validate()?;
        if self.fit.epochs == 0 || self.fit.batch_size == 0 {
            return Err(CoreError::config("fit.epochs and fit.batch_size must be positive"));
        }
        Ok(())
    }

    /// The built-in defaults rendered as JSON, key by key.
    pub fn default_json() -> String {
        serde_json::to_string_pretty(&RunConfig::default())
            .expect("default configuration always serialises")
    }
}

/// Reads and validates a configuration file. Every failure, including an
/// unreadable file or an unknown key, is reported as a configuration error.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::config(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
        CoreError::config(format!("{}:{}: {e}", path.display(), e.line()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}
