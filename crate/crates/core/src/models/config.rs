use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Padding;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Mlp,
    Cnn,
    Tmct,
    Tmcvit,
}

impl Kind {
    pub const ALL: [Kind; 4] = [Kind::Mlp, Kind::Cnn, Kind::Tmct, Kind::Tmcvit];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Mlp => "mlp",
            Kind::Cnn => "cnn",
            Kind::Tmct => "tmct",
            Kind::Tmcvit => "tmcvit",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown model kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 100, 50, 20],
            dropout: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub filters: Vec<usize>,
    pub kernels: Vec<[usize; 2]>,
    pub pools: Vec<[usize; 2]>,
    /// Shrink a pool window to the map extent when the map is smaller than
    /// the window, instead of producing an empty map.
    pub clip_pools: bool,
    pub dropout: f64,
    pub dense: Vec<usize>,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            filters: vec![16, 32, 64, 128, 256],
            kernels: vec![[1, 20], [1, 20], [1, 10], [3, 3], [3, 3]],
            pools: vec![[1, 10], [1, 10], [1, 5], [2, 2], [2, 2]],
            clip_pools: true,
            dropout: 0.5,
            dense: vec![256, 64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SequencePooling {
    #[default]
    Mean,
    Flatten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmctConfig {
    pub filters: Vec<usize>,
    pub kernels: Vec<[usize; 2]>,
    pub pools: Vec<[usize; 2]>,
    pub num_heads: usize,
    pub d_ff: usize,
    pub depth: usize,
    pub pooling: SequencePooling,
    pub dense: Vec<usize>,
    pub dense_dropout: f64,
    pub embedding_dropout: f64,
    pub residual_dropout: f64,
}

impl Default for TmctConfig {
    fn default() -> Self {
        Self {
            filters: vec![16, 32, 32],
            kernels: vec![[1, 20], [1, 20], [1, 10]],
            pools: vec![[1, 10], [1, 6], [1, 6]],
            num_heads: 8,
            d_ff: 64,
            depth: 2,
            pooling: SequencePooling::Mean,
            dense: vec![64, 16],
            dense_dropout: 0.5,
            embedding_dropout: 0.1,
            residual_dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TmcvitConfig {
    /// Filters of the pooled convolutions followed by the final valid one.
    pub filters: Vec<usize>,
    pub kernels: Vec<[usize; 2]>,
    /// One pool per pooled convolution (all but the last).
    pub pools: Vec<[usize; 2]>,
    pub crop_width: usize,
    pub patch: usize,
    pub d_model: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub depth: usize,
    pub dense: Vec<usize>,
    pub dense_dropout: f64,
    pub embedding_dropout: f64,
    pub residual_dropout: f64,
}

impl Default for TmcvitConfig {
    fn default() -> Self {
        Self {
            filters: vec![16, 32, 64, 64],
            kernels: vec![[1, 20], [1, 20], [1, 10], [3, 3]],
            pools: vec![[1, 9], [1, 7], [1, 3]],
            crop_width: 23,
            patch: 3,
            d_model: 64,
            num_heads: 4,
            d_ff: 128,
            depth: 8,
            dense: vec![2048, 1024],
            dense_dropout: 0.5,
            embedding_dropout: 0.1,
            residual_dropout: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Mlp(MlpConfig),
    Cnn(CnnConfig),
    Tmct(TmctConfig),
    Tmcvit(TmcvitConfig),
}

impl Arch {
    pub fn kind(&self) -> Kind {
        match self {
            Arch::Mlp(_) => Kind::Mlp,
            Arch::Cnn(_) => Kind::Cnn,
            Arch::Tmct(_) => Kind::Tmct,
            Arch::Tmcvit(_) => Kind::Tmcvit,
        }
    }

    pub fn reference(kind: Kind) -> Self {
        match kind {
            Kind::Mlp => Arch::Mlp(MlpConfig::default()),
            Kind::Cnn => Arch::Cnn(CnnConfig::default()),
            Kind::Tmct => Arch::Tmct(TmctConfig::default()),
            Kind::Tmcvit => Arch::Tmcvit(TmcvitConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub channels: usize,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    pub arch: Arch,
}

impl ModelConfig {
    /// The reference configuration of `kind` for 23 channels × `samples`.
    pub fn reference(kind: Kind, samples: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            channels: 23,
            samples,
            seed: 0,
            arch: Arch::reference(kind),
        }
    }

    pub fn kind(&self) -> Kind {
        self.arch.kind()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    /// Checks the schema and the full shape chain.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ModelError::InvalidConfig(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        super::plan::plan(self).map(|_| ())
    }
}

pub(crate) fn padding_for_last_vit(i: usize, n: usize) -> Padding {
    if i + 1 == n {
        Padding::Valid
    } else {
        Padding::Same
    }
}
