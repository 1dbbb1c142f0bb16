//! Experiment configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HirError, Result};
use crate::harness::eval::EvalConfig;
use crate::harness::judge::RemoteJudgeConfig;
use crate::instructions::TaskSpec;
use crate::policy::Architecture;
use crate::trainer::{Algorithm, TrainerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperLike,
    HardFamily,
    Tiny,
}

impl Preset {
    pub fn spec(&self) -> TaskSpec {
        match self {
            Preset::PaperLike => TaskSpec::paper_like(),
            Preset::HardFamily => TaskSpec::hard_family(),
            Preset::Tiny => TaskSpec::tiny(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicySize {
    /// Small enough for full finite-difference checks.
    Probe,
    Small,
}

impl PolicySize {
    pub fn architecture(&self, vocab: usize) -> Architecture {
        match self {
            PolicySize::Probe => Architecture::probe(vocab),
            PolicySize::Small => Architecture::small(vocab),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub preset: Preset,
    pub train_size: usize,
    pub eval_size: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            preset: Preset::HardFamily,
            train_size: 64,
            eval_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub size: PolicySize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            size: PolicySize::Small,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeMode {
    Mock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeConfig {
    pub mode: JudgeMode,
    pub remote: RemoteJudgeConfig,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            mode: JudgeMode::Mock,
            remote: RemoteJudgeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write rollout/replay audit logs.
    pub audit: bool,
    pub algorithms: Vec<Algorithm>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            audit: false,
            algorithms: Algorithm::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct ExperimentConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub task: TaskConfig,
    pub policy: PolicyConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
    pub judge: JudgeConfig,
    pub output: OutputConfig,
}


/// Seeds for the independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub dataset: u64,
    pub init: u64,
    pub rollouts: u64,
    pub eval: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HirError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HirError::Config(e.to_string()))
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            dataset: self.seed.wrapping_add(1_000),
            init: self.seed.wrapping_add(2_000),
            rollouts: self.seed.wrapping_add(3_000),
            eval: self.seed.wrapping_add(4_000),
        }
    }

    /// Trainer configuration with the derived rollout seed and the given algorithm.
    pub fn trainer_for(&self, algorithm: Algorithm) -> TrainerConfig {
        TrainerConfig {
            seed: self.seeds().rollouts,
            algorithm,
            ..self.trainer.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.preset.spec().validate()?;
        self.trainer.validate()?;
        self.eval.validate()?;
        if self.task.train_size == 0 || self.task.eval_size == 0 {
            return Err(HirError::Config(
                "train and eval sizes must be positive".into(),
            ));
        }
        if self.output.algorithms.is_empty() {
            return Err(HirError::Config("no algorithms selected".into()));
        }
        if self.judge.mode == JudgeMode::Remote && self.judge.remote.endpoint.is_empty() {
            return Err(HirError::Config(
                "remote judge mode needs an endpoint".into(),
            ));
        }
        Ok(())
    }
}
