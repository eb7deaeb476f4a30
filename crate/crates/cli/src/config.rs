//! The run configuration document.

use std::path::{Path, PathBuf};

use avar_core::experiment::ExperimentConfig;
use avar_core::intervention::InterventionConfig;
use avar_core::model::ModelConfig;
use avar_core::rl::{LookupConfig, RLConfig};
use avar_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Checkpoint to start from (rl, gen).
    pub checkpoint: Option<PathBuf>,
    /// Where to write the trained checkpoint (train, rl).
    pub checkpoint_out: Option<PathBuf>,
    /// JSONL history (train, rl) or report (compare) destination.
    pub output: Option<PathBuf>,
    pub dump: Option<PathBuf>,
    pub dump_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub endpoint: Option<String>,
    pub templates: Option<PathBuf>,
    pub concurrency: usize,
    /// Rule-mode interval; `None` asks the backend to place anchors.
    pub rule_anchor_every: Option<usize>,
    pub lexicon: Option<Vec<String>>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub max_attempts: u32,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            endpoint: None,
            templates: None,
            concurrency: 4,
            rule_anchor_every: None,
            lexicon: None,
            max_tokens: 1024,
            temperature: 0.0,
            max_attempts: 3,
        }
    }
}

/// Every setting a subcommand may need; command-line flags override it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Overrides the seed of every stage when set.
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub env: LookupConfig,
    pub train: TrainConfig,
    pub rl: RLConfig,
    pub intervention: InterventionConfig,
    pub experiment: ExperimentSettings,
    pub synth: SynthSettings,
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        ExperimentSettings {
            seeds: d.seeds,
            eval_episodes: d.eval_episodes,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model,
            env: self.env,
            train: self.train.clone(),
            rl: self.rl.clone(),
            seeds: self.experiment.seeds.clone(),
            eval_episodes: self.experiment.eval_episodes,
        }
    }
}

/// Inputs must be readable files; outputs need an existing parent directory.
pub fn check_paths(inputs: &[&Path], outputs: &[&Path]) -> CliResult<()> {
    for p in inputs {
        if !p.is_file() {
            return Err(CliError::input(p, "no such file"));
        }
    }
    for p in outputs {
        let parent = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(CliError::invalid(format!(
                "{}: directory {} does not exist",
                p.display(),
                parent.display()
            )));
        }
    }
    Ok(())
}
