//! Scaled dot-product attention, multi-head self-attention and the post-norm
//! transformer encoder block.

use crate::autodiff::{invalid_arg, Graph, GraphError, Mode, Var};
use crate::params::{Bindings, Init, ParamSpec};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// `x · w + b` over the last axis of `x`.
pub fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var, GraphError> {
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// Attention weights `softmax(Q·Kᵀ / sqrt(scale_dk))` over the last two axes.
pub fn attention_weights<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    scale_dk: T,
) -> Result<Var, GraphError> {
    if scale_dk <= T::zero() {
        return Err(invalid_arg(
            "attention",
            "scale denominator must be positive",
        ));
    }
    let rank = g.shape(k).len();
    if rank < 2 {
        return Err(invalid_arg("attention", "keys must have rank ≥ 2"));
    }
    let kt = g.transpose(k, rank - 2, rank - 1)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, T::one() / scale_dk.sqrt());
    g.softmax(scaled)
}

/// `softmax(Q·Kᵀ/√d_k)·V` with `d_k` the last extent of `q`. Leading axes are
/// batch axes. Returns the output and the attention weights.
pub fn scaled_dot_product_attention<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var), GraphError> {
    let dk = *g.shape(q).last().unwrap_or(&0);
    if dk == 0 {
        return Err(invalid_arg("attention", "d_k = 0"));
    }
    let w = attention_weights(g, q, k, T::of(dk as f64))?;
    Ok((g.matmul(w, v)?, w))
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
    pub num_heads: usize,
}

impl AttentionParams {
    pub fn specs(prefix: &str, d_model: usize) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for p in ["q", "k", "v", "o"] {
            specs.push(ParamSpec::weight(
                format!("{prefix}.w_{p}"),
                vec![d_model, d_model],
                d_model,
            ));
            specs.push(ParamSpec::constant(
                format!("{prefix}.b_{p}"),
                vec![d_model],
                Init::Zeros,
            ));
        }
        specs
    }

    pub fn bind(b: &Bindings, prefix: &str, num_heads: usize) -> Self {
        let v = |n: &str| b.var(&format!("{prefix}.{n}"));
        Self {
            w_q: v("w_q"),
            b_q: v("b_q"),
            w_k: v("w_k"),
            b_k: v("b_k"),
            w_v: v("w_v"),
            b_v: v("b_v"),
            w_o: v("w_o"),
            b_o: v("b_o"),
            num_heads,
        }
    }
}

/// Self-attention with `num_heads` heads over `x: N×T×d_model` (or `T×d_model`).
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &AttentionParams,
) -> Result<Var, GraphError> {
    let shape = g.shape(x).to_vec();
    let (batch, tokens, d_model) = match shape.as_slice() {
        [t, d] => (1, *t, *d),
        [n, t, d] => (*n, *t, *d),
        _ => {
            return Err(invalid_arg(
                "multi_head_attention",
                format!("expected N×T×d or T×d input, got {shape:?}"),
            ))
        }
    };
    let h = p.num_heads;
    if h == 0 || d_model % h != 0 {
        return Err(invalid_arg(
            "multi_head_attention",
            format!("d_model {d_model} not divisible by {h} heads"),
        ));
    }
    let dk = d_model / h;
    let x3 = g.reshape(x, &[batch, tokens, d_model])?;
    let heads = |g: &mut Graph<T>, w: Var, b: Var| -> Result<Var, GraphError> {
        let y = linear(g, x3, w, b)?;
        let y = g.reshape(y, &[batch, tokens, h, dk])?;
        g.permute(y, &[0, 2, 1, 3])
    };
    let q = heads(g, p.w_q, p.b_q)?;
    let k = heads(g, p.w_k, p.b_k)?;
    let v = heads(g, p.w_v, p.b_v)?;
    let (att, _) = scaled_dot_product_attention(g, q, k, v)?;
    let att = g.permute(att, &[0, 2, 1, 3])?;
    let concat = g.reshape(att, &[batch, tokens, d_model])?;
    let out = linear(g, concat, p.w_o, p.b_o)?;
    g.reshape(out, &shape)
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderBlockParams {
    pub attention: AttentionParams,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub residual_dropout: f64,
}

impl EncoderBlockParams {
    pub fn specs(prefix: &str, d_model: usize, d_ff: usize) -> Vec<ParamSpec> {
        let mut specs = AttentionParams::specs(&format!("{prefix}.attn"), d_model);
        specs.extend([
            ParamSpec::weight(format!("{prefix}.ff1.w"), vec![d_model, d_ff], d_model),
            ParamSpec::constant(format!("{prefix}.ff1.b"), vec![d_ff], Init::Zeros),
            ParamSpec::weight(format!("{prefix}.ff2.w"), vec![d_ff, d_model], d_ff),
            ParamSpec::constant(format!("{prefix}.ff2.b"), vec![d_model], Init::Zeros),
            ParamSpec::constant(format!("{prefix}.ln1.gamma"), vec![d_model], Init::Ones),
            ParamSpec::constant(format!("{prefix}.ln1.beta"), vec![d_model], Init::Zeros),
            ParamSpec::constant(format!("{prefix}.ln2.gamma"), vec![d_model], Init::Ones),
            ParamSpec::constant(format!("{prefix}.ln2.beta"), vec![d_model], Init::Zeros),
        ]);
        specs
    }

    pub fn bind(b: &Bindings, prefix: &str, num_heads: usize, residual_dropout: f64) -> Self {
        let v = |n: &str| b.var(&format!("{prefix}.{n}"));
        Self {
            attention: AttentionParams::bind(b, &format!("{prefix}.attn"), num_heads),
            ff1_w: v("ff1.w"),
            ff1_b: v("ff1.b"),
            ff2_w: v("ff2.w"),
            ff2_b: v("ff2.b"),
            ln1_gamma: v("ln1.gamma"),
            ln1_beta: v("ln1.beta"),
            ln2_gamma: v("ln2.gamma"),
            ln2_beta: v("ln2.beta"),
            residual_dropout,
        }
    }
}

/// Post-norm encoder block:
/// `y = LN(x + Dropout(MHA(x)))`, `z = LN(y + Dropout(FFN(y)))`.
pub fn encoder_block<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    p: &EncoderBlockParams,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var, GraphError> {
    let a = multi_head_attention(g, x, &p.attention)?;
    let a = g.dropout(a, p.residual_dropout, mode, rng)?;
    let r = g.add(x, a)?;
    let y = g.layer_norm(r, p.ln1_gamma, p.ln1_beta)?;
    let f = linear(g, y, p.ff1_w, p.ff1_b)?;
    let f = g.relu(f);
    let f = linear(g, f, p.ff2_w, p.ff2_b)?;
    let f = g.dropout(f, p.residual_dropout, mode, rng)?;
    let r = g.add(y, f)?;
    g.layer_norm(r, p.ln2_gamma, p.ln2_beta)
}
