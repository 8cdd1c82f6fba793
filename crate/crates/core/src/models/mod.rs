//! The MLP, CNN, TMC-T and TMC-ViT architectures.

mod config;
mod plan;

use std::path::Path;

use thiserror::Error;

pub use config::{
    Arch, CnnConfig, Kind, MlpConfig, ModelConfig, SequencePooling, TmctConfig, TmcvitConfig,
    SCHEMA_VERSION,
};
pub use plan::{
    param_count, plan, shape_trace, ConvStage, Dense, Plan, TraceEntry, POSITION_INIT_STD,
};

use crate::attention::{encoder_block, linear, EncoderBlockParams};
use crate::autodiff::{BatchStats, Graph, GraphError, Mode, Var};
use crate::checkpoint::{self, CheckpointError};
use crate::params::{Bindings, ParamStore};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Running statistics keep this fraction of their previous value per update.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: String },
    #[error("input shape {got:?} does not match expected [N, {channels}, {samples}]")]
    InputShape {
        got: Vec<usize>,
        channels: usize,
        samples: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Graph handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardOutput<T> {
    /// Pre-sigmoid output, shape `[N]`.
    pub logits: Var,
    /// Probabilities, shape `[N]`.
    pub probs: Var,
    /// Batch statistics of every batch-norm layer (train mode only).
    pub bn_stats: Vec<(String, BatchStats<T>)>,
}

/// An instantiated model: config, derived plan and named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    plan: Plan,
    params: ParamStore<T>,
}

fn check<T: Scalar>(g: &Graph<T>, v: Var, layer: &str) -> Result<Var, ModelError> {
    if g.value(v).all_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFinite {
            layer: layer.to_string(),
        })
    }
}

impl<T: Scalar> Model<T> {
    /// Builds the model with parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let plan = plan::plan(&config)?;
        let mut rng = Rng::new(config.seed);
        let params = ParamStore::from_specs(&plan.specs, &mut rng);
        Ok(Self {
            config,
            plan,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.plan
            .specs
            .iter()
            .filter(|s| s.trainable)
            .map(|s| s.numel())
            .sum()
    }

    /// Binds trainable parameters into `g`.
    pub fn bind(&self, g: &mut Graph<T>, differentiable: bool) -> Bindings {
        self.params.bind(g, differentiable)
    }

    /// Runs the network on `x` of shape `[N, channels, samples]`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        b: &Bindings,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<ForwardOutput<T>, ModelError> {
        let shape = g.shape(x).to_vec();
        let (c, l) = (self.config.channels, self.config.samples);
        if shape.len() != 3 || shape[1] != c || shape[2] != l || shape[0] == 0 {
            return Err(ModelError::InputShape {
                got: shape,
                channels: c,
                samples: l,
            });
        }
        let n = shape[0];
        let mut stats = Vec::new();
        let logits = match &self.config.arch {
            Arch::Mlp(m) => {
                let mut h = g.reshape(x, &[n, c * l])?;
                let hidden = self.plan.dense.len() - 1;
                for d in &self.plan.dense[..hidden] {
                    h = self.dense(g, b, h, d)?;
                    h = g.relu(h);
                    h = g.dropout(h, m.dropout, mode, rng)?;
                }
                self.dense(g, b, h, &self.plan.dense[hidden])?
            }
            Arch::Cnn(m) => {
                let mut h = g.reshape(x, &[n, 1, c, l])?;
                for st in &self.plan.stages {
                    h = self.conv_stage(g, b, h, st, mode, &mut stats)?;
                }
                h = g.dropout(h, m.dropout, mode, rng)?;
                let flat = g.value(h).len() / n;
                h = g.reshape(h, &[n, flat])?;
                self.classifier(g, b, h, &self.plan.dense, |_| 0.0, mode, rng)?
            }
            Arch::Tmct(m) => {
                let mut h = g.reshape(x, &[n, 1, c, l])?;
                for st in &self.plan.stages {
                    h = self.conv_stage(g, b, h, st, mode, &mut stats)?;
                }
                let (t, d) = (self.plan.tokens, self.plan.d_model);
                h = g.permute(h, &[0, 2, 3, 1])?;
                h = g.reshape(h, &[n, t, d])?;
                h = self.encode(
                    g,
                    b,
                    h,
                    m.depth,
                    m.num_heads,
                    m.embedding_dropout,
                    m.residual_dropout,
                    mode,
                    rng,
                )?;
                h = match m.pooling {
                    SequencePooling::Mean => g.mean(h, 1)?,
                    SequencePooling::Flatten => g.reshape(h, &[n, t * d])?,
                };
                let p = m.dense_dropout;
                let hidden = m.dense.len();
                self.classifier(
                    g,
                    b,
                    h,
                    &self.plan.dense,
                    |i| if i < hidden { p } else { 0.0 },
                    mode,
                    rng,
                )?
            }
            Arch::Tmcvit(m) => {
                let mut h = g.reshape(x, &[n, 1, c, l])?;
                let (pooled, last) = self.plan.stages.split_at(self.plan.stages.len() - 1);
                for st in pooled {
                    h = self.conv_stage(g, b, h, st, mode, &mut stats)?;
                }
                let (width, start) = self.plan.crop.expect("vit plan has a crop");
                h = g.slice(h, 3, start..start + width)?;
                h = self.conv_stage(g, b, h, &last[0], mode, &mut stats)?;
                let (rows, cols, patch_len) = self.plan.grid.expect("vit plan has a grid");
                let f = last[0].filters;
                let p = m.patch;
                h = g.reshape(h, &[n, f, rows, p, cols, p])?;
                h = g.permute(h, &[0, 2, 4, 3, 5, 1])?;
                h = g.reshape(h, &[n, rows * cols, patch_len])?;
                let proj = &self.plan.dense[0];
                h = self.dense(g, b, h, proj)?;
                h = self.encode(
                    g,
                    b,
                    h,
                    m.depth,
                    m.num_heads,
                    m.embedding_dropout,
                    m.residual_dropout,
                    mode,
                    rng,
                )?;
                h = g.reshape(h, &[n, self.plan.tokens * self.plan.d_model])?;
                let p = m.dense_dropout;
                let last_hidden = m.dense.len();
                self.classifier(
                    g,
                    b,
                    h,
                    &self.plan.dense[1..],
                    |i| if i + 1 == last_hidden { p } else { 0.0 },
                    mode,
                    rng,
                )?
            }
        };
        let logits = g.reshape(logits, &[n])?;
        let probs = g.sigmoid(logits);
        check(g, probs, "sigmoid")?;
        Ok(ForwardOutput {
            logits,
            probs,
            bn_stats: stats,
        })
    }

    fn dense(&self, g: &mut Graph<T>, b: &Bindings, x: Var, d: &Dense) -> Result<Var, ModelError> {
        let y = linear(
            g,
            x,
            b.var(&format!("{}.w", d.name)),
            b.var(&format!("{}.b", d.name)),
        )?;
        check(g, y, &d.name)
    }

    /// Hidden dense layers with ReLU, each followed by dropout at
    /// `dropout(i)`, then the unactivated head.
    #[allow(clippy::too_many_arguments)]
    fn classifier(
        &self,
        g: &mut Graph<T>,
        b: &Bindings,
        mut h: Var,
        layers: &[Dense],
        dropout: impl Fn(usize) -> f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var, ModelError> {
        let hidden = layers.len() - 1;
        for (i, d) in layers[..hidden].iter().enumerate() {
            h = self.dense(g, b, h, d)?;
            h = g.relu(h);
            h = g.dropout(h, dropout(i), mode, rng)?;
        }
        self.dense(g, b, h, &layers[hidden])
    }

    #[allow(clippy::too_many_arguments)]
    fn encode(
        &self,
        g: &mut Graph<T>,
        b: &Bindings,
        tokens: Var,
        depth: usize,
        heads: usize,
        embedding_dropout: f64,
        residual_dropout: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var, ModelError> {
        let mut h = g.add(tokens, b.var("pos"))?;
        h = g.dropout(h, embedding_dropout, mode, rng)?;
        for i in 0..depth {
            let name = format!("enc{i}");
            let p = EncoderBlockParams::bind(b, &name, heads, residual_dropout);
            h = encoder_block(g, h, &p, mode, rng)?;
            check(g, h, &name)?;
        }
        Ok(h)
    }

    fn conv_stage(
        &self,
        g: &mut Graph<T>,
        b: &Bindings,
        x: Var,
        st: &ConvStage,
        mode: Mode,
        stats: &mut Vec<(String, BatchStats<T>)>,
    ) -> Result<Var, ModelError> {
        let name = &st.name;
        let y = g.conv2d(x, b.var(&format!("{name}.conv.w")), st.padding)?;
        check(g, y, &format!("{name}.conv"))?;
        let gamma = b.var(&format!("{name}.bn.gamma"));
        let beta = b.var(&format!("{name}.bn.beta"));
        let y = match mode {
            Mode::Train => {
                let (y, s) = g.batch_norm_train(y, gamma, beta)?;
                stats.push((name.clone(), s));
                y
            }
            Mode::Eval => {
                let mean = self.buffer(&format!("{name}.bn.running_mean"));
                let var = self.buffer(&format!("{name}.bn.running_var"));
                g.batch_norm_eval(y, gamma, beta, mean, var)?
            }
        };
        check(g, y, &format!("{name}.bn"))?;
        let mut y = g.relu(y);
        if let Some(window) = st.pool {
            y = g.max_pool2d(y, window)?;
        }
        Ok(y)
    }

    fn buffer(&self, name: &str) -> &[T] {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("buffer {name} missing from parameter store"))
            .data()
    }

    /// Folds batch statistics into the running averages.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats<T>)]) {
        let m = T::of(BN_MOMENTUM);
        let k = T::one() - m;
        for (name, s) in stats {
            for (key, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                let t = self
                    .params
                    .get_mut(&format!("{name}.bn.{key}"))
                    .expect("batch-norm buffer exists");
                for (r, &v) in t.data_mut().iter_mut().zip(batch.iter()) {
                    *r = m * *r + k * v;
                }
            }
        }
    }

    /// Eval-mode probabilities for `x` of shape `[N, channels, samples]`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mut rng = Rng::new(0);
        let out = self.forward(&mut g, &b, xv, Mode::Eval, &mut rng)?;
        Ok(g.value(out.probs).data().to_vec())
    }

    /// Serialized parameters and buffers.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        checkpoint::encode(self.params.iter())
    }

    /// Replaces every parameter from checkpoint bytes. Names and shapes must
    /// match the config exactly.
    pub fn load_checkpoint(&mut self, bytes: &[u8]) -> Result<(), ModelError> {
        let entries = checkpoint::decode::<T>(bytes)?;
        if entries.len() != self.params.len() {
            return Err(CheckpointError::Missing(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                self.params.len()
            ))
            .into());
        }
        for (name, t) in entries {
            let slot = self
                .params
                .get_mut(&name)
                .ok_or_else(|| CheckpointError::Missing(format!("unexpected tensor {name}")))?;
            if slot.shape() != t.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: slot.shape().to_vec(),
                    stored: t.shape().to_vec(),
                }
                .into());
            }
            *slot = t;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        checkpoint::save(path, self.params.iter())?;
        Ok(())
    }

    pub fn load(config: ModelConfig, path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(CheckpointError::Io)?;
        let mut model = Self::new(config)?;
        model.load_checkpoint(&bytes)?;
        Ok(model)
    }
}
