//! Experiment configuration: a TOML document plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tmc_core::epoching::{LabelPolicy, SplitPlan, WindowSpec};
use tmc_core::models::{Arch, Kind, ModelConfig, SCHEMA_VERSION};
use tmc_core::signal::{SynthSpec, CHB_MIT_23};
use tmc_core::training::TrainConfig;

use crate::ConfigError;

/// Where the recordings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    /// One generated recording; nothing is read from disk.
    Synthetic {
        #[serde(default = "default_synth")]
        synth: SynthSpec,
    },
    /// EDF files listed in a CHB-MIT style summary.
    Edf {
        dir: PathBuf,
        /// Summary file, relative to `dir` unless absolute.
        summary: PathBuf,
        /// `<file_id> <seconds>` lines placing each file on the patient
        /// timeline. Without it files are laid end to end in summary order.
        #[serde(default)]
        offsets: Option<PathBuf>,
        /// Channel labels to keep, in order.
        #[serde(default = "default_channels")]
        channels: Vec<String>,
    },
}

fn default_channels() -> Vec<String> {
    CHB_MIT_23.iter().map(|s| s.to_string()).collect()
}

/// Three seizures in 11.2 hours of 23-channel signal, the last two too close
/// to the first to count as lead seizures.
fn default_synth() -> SynthSpec {
    let h = 3600.0;
    SynthSpec {
        duration: 11.2 * h,
        seizure_times: vec![8.0 * h, 9.5 * h, 11.0 * h],
        seed: 17,
        ..SynthSpec::default()
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            synth: default_synth(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub patient: String,
    pub out: PathBuf,
    /// When set, replaces the split, model and training seeds. Otherwise the
    /// model is initialized from `train.seed`.
    pub seed: Option<u64>,
    pub precision: Precision,
    /// Threads for cross-validation folds.
    pub jobs: usize,
    pub allow_ineligible: bool,
    /// Fold held out for validation when training the reported model.
    pub validation_fold: usize,
    /// Also run k-fold cross-validation and write per-fold metrics.
    pub cross_validate: bool,
    pub model: Kind,
    /// Architecture override; its kind must match `model`.
    pub arch: Option<Arch>,
    pub data: DataConfig,
    pub policy: LabelPolicy,
    pub window: WindowSpec,
    pub split: SplitPlan,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            patient: "synth".into(),
            out: PathBuf::from("runs/synth"),
            seed: None,
            precision: Precision::F32,
            jobs: 1,
            allow_ineligible: false,
            validation_fold: 0,
            cross_validate: false,
            model: Kind::Tmcvit,
            arch: None,
            data: DataConfig::default(),
            policy: LabelPolicy::default(),
            window: WindowSpec::default(),
            split: SplitPlan::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values that replace config keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub patient: Option<String>,
    pub preictal: Option<f64>,
    pub window: Option<f64>,
    pub overlap: Option<f64>,
    pub model: Option<Kind>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub allow_ineligible: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn apply(mut self, o: &Overrides) -> Self {
        if let Some(p) = &o.patient {
            self.patient = p.clone();
        }
        if let Some(m) = o.preictal {
            self.policy.preictal_minutes = m;
            if let DataConfig::Synthetic { synth } = &mut self.data {
                synth.policy.preictal_minutes = m;
            }
        }
        if let Some(w) = o.window {
            self.window.length_seconds = w;
        }
        if let Some(v) = o.overlap {
            self.window.preictal_overlap_seconds = v;
        }
        if let Some(k) = o.model {
            if self.arch.as_ref().is_some_and(|a| a.kind() != k) {
                self.arch = None;
            }
            self.model = k;
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.allow_ineligible |= o.allow_ineligible;
        self
    }

    /// Seeds after the top-level `seed`, if any, has been pushed down.
    pub fn split_plan(&self) -> SplitPlan {
        SplitPlan {
            seed: self.seed.unwrap_or(self.split.seed),
            ..self.split
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed.unwrap_or(self.train.seed),
            ..self.train.clone()
        }
    }

    pub fn channel_count(&self) -> usize {
        match &self.data {
            DataConfig::Synthetic { synth } => synth.num_channels,
            DataConfig::Edf { channels, .. } => channels.len(),
        }
    }

    /// Label policy in force. Synthetic data is generated under its own
    /// policy, which must agree with the labeling one.
    pub fn label_policy(&self) -> LabelPolicy {
        self.policy
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            schema_version: SCHEMA_VERSION,
            channels: self.channel_count(),
            samples: self.window.window_samples(),
            seed: self.seed.unwrap_or(self.train.seed),
            arch: self.arch.clone().unwrap_or_else(|| Arch::reference(self.model)),
        }
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |e: &dyn std::fmt::Display| ConfigError(e.to_string());
        if self.patient.is_empty() {
            return Err(ConfigError("patient id is empty".into()));
        }
        if self.jobs == 0 {
            return Err(ConfigError("jobs must be at least 1".into()));
        }
        self.policy.validate().map_err(|e| bad(&e))?;
        self.window.validate().map_err(|e| bad(&e))?;
        self.split.validate().map_err(|e| bad(&e))?;
        self.train.validate().map_err(|e| bad(&e))?;
        if self.validation_fold >= self.split.folds {
            return Err(ConfigError(format!(
                "validation_fold {} but only {} folds",
                self.validation_fold, self.split.folds
            )));
        }
        if let Some(a) = &self.arch {
            if a.kind() != self.model {
                return Err(ConfigError(format!(
                    "arch is {} but model is {}",
                    a.kind(),
                    self.model
                )));
            }
        }
        match &self.data {
            DataConfig::Synthetic { synth } => {
                if synth.policy != self.policy {
                    return Err(ConfigError(
                        "data.synth.policy must equal policy (the signature marks the labeled preictal span)".into(),
                    ));
                }
            }
            DataConfig::Edf { channels, .. } => {
                if channels.is_empty() {
                    return Err(ConfigError("no channels selected".into()));
                }
            }
        }
        self.model_config().validate().map_err(|e| bad(&e))?;
        Ok(())
    }
}
