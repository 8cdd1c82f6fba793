//! Shape arithmetic and parameter layout, derived from a config alone.

use serde::Serialize;

use super::config::{padding_for_last_vit, Arch, ModelConfig, SequencePooling};
use super::ModelError;
use crate::attention::EncoderBlockParams;
use crate::autodiff::Padding;
use crate::params::{Init, ParamSpec};

/// Standard deviation of the positional-embedding initialization.
pub const POSITION_INIT_STD: f64 = 0.02;

/// Per-sample output shape of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub layer: String,
    pub shape: Vec<usize>,
}

/// One conv → batch norm → ReLU (→ max-pool) block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStage {
    pub name: String,
    pub in_channels: usize,
    pub filters: usize,
    pub kernel: (usize, usize),
    pub padding: Padding,
    /// Effective pool window (after clipping, if enabled).
    pub pool: Option<(usize, usize)>,
    /// `[filters, h, w]` after the stage.
    pub out: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub specs: Vec<ParamSpec>,
    pub trace: Vec<TraceEntry>,
    pub stages: Vec<ConvStage>,
    pub dense: Vec<Dense>,
    /// Sequence length fed to the encoder (transformers only).
    pub tokens: usize,
    pub d_model: usize,
    /// Cropped width and first cropped column (TMC-ViT only).
    pub crop: Option<(usize, usize)>,
    /// Patch grid `(rows, cols)` and patch vector length (TMC-ViT only).
    pub grid: Option<(usize, usize, usize)>,
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidConfig(msg.into())
}

fn check_dropout(name: &str, p: f64) -> Result<(), ModelError> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in [0, 1), got {p}")))
    }
}

fn bn_specs(prefix: &str, c: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec::constant(format!("{prefix}.bn.gamma"), vec![c], Init::Ones),
        ParamSpec::constant(format!("{prefix}.bn.beta"), vec![c], Init::Zeros),
        ParamSpec::buffer(format!("{prefix}.bn.running_mean"), vec![c], Init::Zeros),
        ParamSpec::buffer(format!("{prefix}.bn.running_var"), vec![c], Init::Ones),
    ]
}

fn dense_specs(d: &Dense) -> [ParamSpec; 2] {
    [
        ParamSpec::weight(format!("{}.w", d.name), vec![d.inputs, d.outputs], d.inputs),
        ParamSpec::constant(format!("{}.b", d.name), vec![d.outputs], Init::Zeros),
    ]
}

struct Builder {
    specs: Vec<ParamSpec>,
    trace: Vec<TraceEntry>,
    stages: Vec<ConvStage>,
    dense: Vec<Dense>,
}

impl Builder {
    fn new(channels: usize, samples: usize) -> Self {
        Self {
            specs: Vec::new(),
            trace: vec![TraceEntry {
                layer: "input".into(),
                shape: vec![1, channels, samples],
            }],
            stages: Vec::new(),
            dense: Vec::new(),
        }
    }

    fn record(&mut self, layer: impl Into<String>, shape: Vec<usize>) {
        self.trace.push(TraceEntry {
            layer: layer.into(),
            shape,
        });
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_stage(
        &mut self,
        name: String,
        input: [usize; 3],
        filters: usize,
        kernel: [usize; 2],
        padding: Padding,
        pool: Option<[usize; 2]>,
        clip: bool,
    ) -> Result<[usize; 3], ModelError> {
        let [c, h, w] = input;
        let (kh, kw) = (kernel[0], kernel[1]);
        if filters == 0 || kh == 0 || kw == 0 {
            return Err(invalid(format!(
                "{name}: filters and kernel extents must be positive"
            )));
        }
        let (mut oh, mut ow) = match padding {
            Padding::Same => (h, w),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(invalid(format!(
                        "{name}: kernel {kh}×{kw} larger than its {h}×{w} input"
                    )));
                }
                (h - kh + 1, w - kw + 1)
            }
        };
        self.specs.push(ParamSpec::weight(
            format!("{name}.conv.w"),
            vec![filters, c, kh, kw],
            c * kh * kw,
        ));
        self.specs.extend(bn_specs(&name, filters));
        self.record(format!("{name}.conv"), vec![filters, oh, ow]);
        let mut eff = None;
        if let Some([ph, pw]) = pool {
            if ph == 0 || pw == 0 {
                return Err(invalid(format!("{name}: pool window of zero extent")));
            }
            let (ph, pw) = if clip {
                (ph.min(oh), pw.min(ow))
            } else {
                (ph, pw)
            };
            oh /= ph;
            ow /= pw;
            if oh == 0 || ow == 0 {
                return Err(invalid(format!(
                    "{name}: input too small for the pool chain (map becomes {oh}×{ow})"
                )));
            }
            eff = Some((ph, pw));
            self.record(format!("{name}.pool"), vec![filters, oh, ow]);
        }
        self.stages.push(ConvStage {
            name,
            in_channels: c,
            filters,
            kernel: (kh, kw),
            padding,
            pool: eff,
            out: [filters, oh, ow],
        });
        Ok([filters, oh, ow])
    }

    fn dense_chain(
        &mut self,
        names: &[String],
        mut inputs: usize,
        widths: &[usize],
    ) -> Result<(), ModelError> {
        for (name, &out) in names.iter().zip(widths) {
            if out == 0 {
                return Err(invalid(format!("{name}: dense width must be positive")));
            }
            let d = Dense {
                name: name.clone(),
                inputs,
                outputs: out,
            };
            self.specs.extend(dense_specs(&d));
            self.record(name.clone(), vec![out]);
            self.dense.push(d);
            inputs = out;
        }
        Ok(())
    }

    /// Hidden layers `fc1..fcK` followed by the single-unit `head`.
    fn classifier(&mut self, inputs: usize, hidden: &[usize]) -> Result<(), ModelError> {
        let mut names: Vec<String> = (1..=hidden.len()).map(|i| format!("fc{i}")).collect();
        names.push("head".into());
        let mut widths = hidden.to_vec();
        widths.push(1);
        self.dense_chain(&names, inputs, &widths)
    }

    fn encoder(
        &mut self,
        depth: usize,
        tokens: usize,
        d_model: usize,
        heads: usize,
        d_ff: usize,
    ) -> Result<(), ModelError> {
        if heads == 0 || d_model % heads != 0 {
            return Err(invalid(format!(
                "d_model {d_model} not divisible by {heads} heads"
            )));
        }
        if d_ff == 0 {
            return Err(invalid("d_ff must be positive"));
        }
        self.specs.push(ParamSpec::constant(
            "pos",
            vec![tokens, d_model],
            Init::Normal {
                std: POSITION_INIT_STD,
            },
        ));
        for i in 0..depth {
            self.specs
                .extend(EncoderBlockParams::specs(&format!("enc{i}"), d_model, d_ff));
            self.record(format!("enc{i}"), vec![tokens, d_model]);
        }
        Ok(())
    }

    fn finish(
        self,
        tokens: usize,
        d_model: usize,
        crop: Option<(usize, usize)>,
        grid: Option<(usize, usize, usize)>,
    ) -> Plan {
        Plan {
            specs: self.specs,
            trace: self.trace,
            stages: self.stages,
            dense: self.dense,
            tokens,
            d_model,
            crop,
            grid,
        }
    }
}

fn check_lists(
    name: &str,
    filters: usize,
    kernels: usize,
    pools: usize,
    expected_pools: usize,
) -> Result<(), ModelError> {
    if filters == 0 || kernels != filters || pools != expected_pools {
        return Err(invalid(format!(
            "{name}: {filters} filters, {kernels} kernels and {pools} pools are inconsistent"
        )));
    }
    Ok(())
}

/// Derives the full layer plan, validating every hyperparameter.
pub fn plan(config: &ModelConfig) -> Result<Plan, ModelError> {
    let (c, l) = (config.channels, config.samples);
    if c == 0 || l == 0 {
        return Err(invalid("input channels and samples must be positive"));
    }
    let mut b = Builder::new(c, l);
    match &config.arch {
        Arch::Mlp(m) => {
            check_dropout("dropout", m.dropout)?;
            let mut names: Vec<String> =
                (1..=m.hidden.len()).map(|i| format!("dense{i}")).collect();
            names.push("head".into());
            let mut widths = m.hidden.clone();
            widths.push(1);
            b.record("flatten", vec![c * l]);
            b.dense_chain(&names, c * l, &widths)?;
            Ok(b.finish(0, 0, None, None))
        }
        Arch::Cnn(m) => {
            check_lists(
                "cnn",
                m.filters.len(),
                m.kernels.len(),
                m.pools.len(),
                m.filters.len(),
            )?;
            check_dropout("dropout", m.dropout)?;
            let mut shape = [1, c, l];
            for i in 0..m.filters.len() {
                shape = b.conv_stage(
                    format!("conv{}", i + 1),
                    shape,
                    m.filters[i],
                    m.kernels[i],
                    Padding::Same,
                    Some(m.pools[i]),
                    m.clip_pools,
                )?;
            }
            let flat = shape.iter().product();
            b.record("flatten", vec![flat]);
            b.classifier(flat, &m.dense)?;
            Ok(b.finish(0, 0, None, None))
        }
        Arch::Tmct(m) => {
            check_lists(
                "tmct",
                m.filters.len(),
                m.kernels.len(),
                m.pools.len(),
                m.filters.len(),
            )?;
            for (n, p) in [
                ("dense_dropout", m.dense_dropout),
                ("embedding_dropout", m.embedding_dropout),
                ("residual_dropout", m.residual_dropout),
            ] {
                check_dropout(n, p)?;
            }
            let mut shape = [1, c, l];
            for i in 0..m.filters.len() {
                shape = b.conv_stage(
                    format!("embed{}", i + 1),
                    shape,
                    m.filters[i],
                    m.kernels[i],
                    Padding::Same,
                    Some(m.pools[i]),
                    false,
                )?;
            }
            let [d_model, h, w] = shape;
            let tokens = h * w;
            b.record("tokens", vec![tokens, d_model]);
            b.encoder(m.depth, tokens, d_model, m.num_heads, m.d_ff)?;
            let pooled = match m.pooling {
                SequencePooling::Mean => d_model,
                SequencePooling::Flatten => tokens * d_model,
            };
            b.record("pool", vec![pooled]);
            b.classifier(pooled, &m.dense)?;
            Ok(b.finish(tokens, d_model, None, None))
        }
        Arch::Tmcvit(m) => {
            let n = m.filters.len();
            check_lists(
                "tmcvit",
                n,
                m.kernels.len(),
                m.pools.len(),
                n.saturating_sub(1),
            )?;
            for (name, p) in [
                ("dense_dropout", m.dense_dropout),
                ("embedding_dropout", m.embedding_dropout),
                ("residual_dropout", m.residual_dropout),
            ] {
                check_dropout(name, p)?;
            }
            let mut shape = [1, c, l];
            for i in 0..n - 1 {
                shape = b.conv_stage(
                    format!("embed{}", i + 1),
                    shape,
                    m.filters[i],
                    m.kernels[i],
                    padding_for_last_vit(i, n),
                    Some(m.pools[i]),
                    false,
                )?;
            }
            let [ch, h, w] = shape;
            if w < m.crop_width || m.crop_width == 0 {
                return Err(invalid(format!(
                    "input too short: width {w} before the crop is below crop_width {}",
                    m.crop_width
                )));
            }
            let start = (w - m.crop_width) / 2;
            shape = [ch, h, m.crop_width];
            b.record("crop", shape.to_vec());
            shape = b.conv_stage(
                format!("embed{n}"),
                shape,
                m.filters[n - 1],
                m.kernels[n - 1],
                padding_for_last_vit(n - 1, n),
                None,
                false,
            )?;
            let [f, gh, gw] = shape;
            let p = m.patch;
            if p == 0 || gh % p != 0 || gw % p != 0 {
                return Err(invalid(format!(
                    "{gh}×{gw} grid is not divisible into {p}×{p} patches"
                )));
            }
            let tokens = (gh / p) * (gw / p);
            let patch_len = p * p * f;
            b.record("patches", vec![tokens, patch_len]);
            let proj = Dense {
                name: "patch_proj".into(),
                inputs: patch_len,
                outputs: m.d_model,
            };
            b.specs.extend(dense_specs(&proj));
            b.record("patch_proj", vec![tokens, m.d_model]);
            b.dense.push(proj);
            b.encoder(m.depth, tokens, m.d_model, m.num_heads, m.d_ff)?;
            let flat = tokens * m.d_model;
            b.record("flatten", vec![flat]);
            b.classifier(flat, &m.dense)?;
            Ok(b.finish(
                tokens,
                m.d_model,
                Some((m.crop_width, start)),
                Some((gh / p, gw / p, patch_len)),
            ))
        }
    }
}

/// Number of trainable scalars. Batch-norm running statistics are excluded.
pub fn param_count(config: &ModelConfig) -> Result<usize, ModelError> {
    Ok(plan(config)?
        .specs
        .iter()
        .filter(|s| s.trainable)
        .map(ParamSpec::numel)
        .sum())
}

/// Per-sample layer output shapes.
pub fn shape_trace(config: &ModelConfig) -> Result<Vec<TraceEntry>, ModelError> {
    Ok(plan(config)?.trace)
}
