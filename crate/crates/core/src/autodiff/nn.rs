//! Neural-network operations: convolution, pooling, normalization,
//! activations, dropout and the binary cross-entropy loss.

use super::kernels::{conv2d_backward, conv2d_forward, dot, sq_dev_sum, sum, ConvGeom};
use super::{invalid_arg as invalid, Graph, GraphError, Mode, Node, Op, Var};
use crate::error::ShapeError;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output keeps the input's spatial extent. Odd padding goes to the
    /// bottom/right.
    Same,
    Valid,
}

/// Per-channel batch statistics from a train-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance.
    pub var: Vec<T>,
}

impl<T: Scalar> Graph<T> {
    /// Cross-correlation of `x: N×C×H×W` with `kernels: F×C×kh×kw`.
    pub fn conv2d(&mut self, x: Var, kernels: Var, padding: Padding) -> Result<Var, GraphError> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(kernels).to_vec());
        for (s, name) in [(&sx, "input"), (&sk, "kernels")] {
            if s.len() != 4 {
                return Err(ShapeError::Other {
                    op: "conv2d",
                    detail: format!("{name} must be rank 4, got {s:?}"),
                }
                .into());
            }
        }
        if sx[1] != sk[1] {
            return Err(ShapeError::Axis {
                op: "conv2d",
                lhs: sx,
                rhs: sk,
                axis: 1,
                a: self.shape(x)[1],
                b: self.shape(kernels)[1],
            }
            .into());
        }
        let (h, w, kh, kw) = (sx[2], sx[3], sk[2], sk[3]);
        if kh == 0 || kw == 0 {
            return Err(invalid("conv2d", "kernel of zero extent"));
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(invalid(
                        "conv2d",
                        format!("kernel {kh}×{kw} larger than input {h}×{w} under valid padding"),
                    ));
                }
                (h - kh + 1, w - kw + 1, 0, 0)
            }
        };
        let geom = ConvGeom {
            n: sx[0],
            c: sx[1],
            h,
            w,
            f: sk[0],
            kh,
            kw,
            oh,
            ow,
            pad_top,
            pad_left,
        };
        let mut out = vec![T::zero(); geom.n * geom.f * oh * ow];
        conv2d_forward(
            self.value(x).data(),
            self.value(kernels).data(),
            &mut out,
            &geom,
        );
        let rg = self.any_grad(&[x, kernels]);
        Ok(self.push(
            Tensor::new([geom.n, geom.f, oh, ow], out)?,
            rg,
            Op::Conv2d {
                x,
                k: kernels,
                pad: (pad_top, pad_left),
            },
        ))
    }

    /// Non-overlapping max pooling with floor semantics: trailing rows and
    /// columns that do not fill a window are dropped.
    pub fn max_pool2d(&mut self, x: Var, window: (usize, usize)) -> Result<Var, GraphError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(ShapeError::Rank {
                op: "max_pool2d",
                expected: 4,
                shape: s,
            }
            .into());
        }
        let (ph, pw) = window;
        if ph == 0 || pw == 0 {
            return Err(invalid("max_pool2d", "pool window of zero extent"));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / ph, w / pw);
        if oh == 0 || ow == 0 {
            return Err(invalid(
                "max_pool2d",
                format!("pool window {ph}×{pw} exceeds input {h}×{w}"),
            ));
        }
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        let mut slot = 0;
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                let first = base + oy * ph * w;
                for ox in 0..ow {
                    let mut best = first + ox * pw;
                    let mut bv = src[best];
                    for i in 0..ph {
                        let row = first + i * w + ox * pw;
                        for (off, &v) in (row..row + pw).zip(&src[row..row + pw]) {
                            // Select rather than branch: the comparison is
                            // unpredictable on real data.
                            let gt = v > bv;
                            bv = if gt { v } else { bv };
                            best = if gt { off } else { best };
                        }
                    }
                    data[slot] = bv;
                    argmax[slot] = best;
                    slot += 1;
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new([n, c, oh, ow], data)?,
            rg,
            Op::MaxPool2d { x, argmax },
        ))
    }

    /// Train-mode batch normalization over every axis except axis 1.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(Var, BatchStats<T>), GraphError> {
        let (n, c, spatial) = self.bn_geometry(x, gamma, beta)?;
        if n < 2 {
            return Err(invalid(
                "batch_norm",
                "train mode needs a batch of at least 2 samples",
            ));
        }
        let m = T::of((n * spatial) as f64);
        let src = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let row = &src[(b * c + ch) * spatial..(b * c + ch + 1) * spatial];
                mean[ch] = mean[ch] + sum(row);
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / m);
        for b in 0..n {
            for ch in 0..c {
                let row = &src[(b * c + ch) * spatial..(b * c + ch + 1) * spatial];
                var[ch] = var[ch] + sq_dev_sum(row, mean[ch]);
            }
        }
        var.iter_mut().for_each(|v| *v = *v / m);
        let inv_std: Vec<T> = var
            .iter()
            .map(|&v| T::one() / (v + T::of(NORM_EPS)).sqrt())
            .collect();
        let (value, xhat) = self.bn_affine(x, gamma, beta, &mean, &inv_std, n, c, spatial);
        let rg = self.any_grad(&[x, gamma, beta]);
        let out = self.push(
            value,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((out, BatchStats { mean, var }))
    }

    /// Eval-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
    ) -> Result<Var, GraphError> {
        let (n, c, spatial) = self.bn_geometry(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(invalid(
                "batch_norm",
                "running statistics do not match channel count",
            ));
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + T::of(NORM_EPS)).sqrt())
            .collect();
        let (value, xhat) = self.bn_affine(x, gamma, beta, running_mean, &inv_std, n, c, spatial);
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            value,
            rg,
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    fn bn_geometry(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
    ) -> Result<(usize, usize, usize), GraphError> {
        let s = self.shape(x);
        if s.len() < 2 {
            return Err(ShapeError::Rank {
                op: "batch_norm",
                expected: 2,
                shape: s.to_vec(),
            }
            .into());
        }
        let c = s[1];
        for p in [gamma, beta] {
            if self.value(p).len() != c {
                return Err(ShapeError::Axis {
                    op: "batch_norm",
                    lhs: s.to_vec(),
                    rhs: self.shape(p).to_vec(),
                    axis: 1,
                    a: c,
                    b: self.value(p).len(),
                }
                .into());
            }
        }
        Ok((s[0], c, s[2..].iter().product()))
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_affine(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: &[T],
        n: usize,
        c: usize,
        spatial: usize,
    ) -> (Tensor<T>, Vec<T>) {
        let src = self.value(x).data();
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                let (mu, is, g, bb) = (mean[ch], inv_std[ch], gm[ch], bt[ch]);
                for ((o, xh), &v) in out[r.clone()]
                    .iter_mut()
                    .zip(&mut xhat[r.clone()])
                    .zip(&src[r])
                {
                    *xh = (v - mu) * is;
                    *o = g * *xh + bb;
                }
            }
        }
        (
            Tensor::new(self.shape(x).to_vec(), out).expect("shape"),
            xhat,
        )
    }

    /// Normalizes over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, GraphError> {
        let s = self.shape(x).to_vec();
        let d = *s
            .last()
            .ok_or_else(|| invalid("layer_norm", "rank-0 input"))?;
        if d == 0 {
            return Err(invalid("layer_norm", "last axis has zero extent"));
        }
        for p in [gamma, beta] {
            if self.value(p).len() != d {
                return Err(ShapeError::Axis {
                    op: "layer_norm",
                    lhs: s.clone(),
                    rhs: self.shape(p).to_vec(),
                    axis: s.len() - 1,
                    a: d,
                    b: self.value(p).len(),
                }
                .into());
            }
        }
        let src = self.value(x).data();
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let rows = src.len() / d;
        let dn = T::of(d as f64);
        let mut xhat = Vec::with_capacity(src.len());
        let mut out = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let is = T::one() / (var + T::of(NORM_EPS)).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let xh = (v - mu) * is;
                xhat.push(xh);
                out.push(gm[j] * xh + bt[j]);
            }
        }
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(s, out)?,
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Sigmoid(x))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, GraphError> {
        let v = self.value(x);
        let d = *v
            .shape()
            .last()
            .ok_or_else(|| invalid("softmax", "rank-0 input"))?;
        let mut data = v.data().to_vec();
        if d > 0 {
            for row in data.chunks_mut(d) {
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for e in row.iter_mut() {
                    *e = (*e - mx).exp();
                    total = total + *e;
                }
                row.iter_mut().for_each(|e| *e = *e / total);
            }
        }
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Softmax(x)))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; eval mode is
    /// the identity.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var, GraphError> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid(
                "dropout",
                format!("probability {p} outside [0, 1)"),
            ));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let v = self.value(x);
        let mask: Vec<T> = (0..v.len())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Dropout { x, mask }))
    }

    /// Mean binary cross-entropy of probabilities `pred` against 0/1
    /// `targets`.
    pub fn bce(&mut self, pred: Var, targets: &[T]) -> Result<Var, GraphError> {
        let p = self.value(pred);
        if p.len() != targets.len() {
            return Err(invalid(
                "bce",
                format!("{} predictions for {} targets", p.len(), targets.len()),
            ));
        }
        if p.is_empty() {
            return Err(invalid("bce", "empty batch"));
        }
        if let Some(bad) = targets.iter().find(|&&y| y != T::zero() && y != T::one()) {
            return Err(invalid("bce", format!("target {bad} is not 0 or 1")));
        }
        let clamped: Vec<T> = p.data().iter().map(|&v| clamp_prob(v)).collect();
        let total: T = clamped
            .iter()
            .zip(targets)
            .map(|(&q, &y)| bce_term(y, q))
            .sum();
        let loss = total / T::of(targets.len() as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::Bce {
                pred,
                targets: targets.to_vec(),
                clamped,
            },
        ))
    }

    pub(super) fn backprop_nn(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let gd = g.data();
        match &node.op {
            Op::Conv2d { x, k, pad } => {
                let (sx, sk) = (self.shape(*x), self.shape(*k));
                let os = node.value.shape();
                let geom = ConvGeom {
                    n: sx[0],
                    c: sx[1],
                    h: sx[2],
                    w: sx[3],
                    f: sk[0],
                    kh: sk[2],
                    kw: sk[3],
                    oh: os[2],
                    ow: os[3],
                    pad_top: pad.0,
                    pad_left: pad.1,
                };
                let mut gx = self
                    .requires_grad(*x)
                    .then(|| vec![T::zero(); self.value(*x).len()]);
                let mut gk = self
                    .requires_grad(*k)
                    .then(|| vec![T::zero(); self.value(*k).len()]);
                conv2d_backward(
                    self.value(*x).data(),
                    self.value(*k).data(),
                    gd,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                    &geom,
                );
                let mut out = Vec::new();
                if let Some(gx) = gx {
                    out.push((*x, Tensor::new(sx.to_vec(), gx).expect("shape")));
                }
                if let Some(gk) = gk {
                    out.push((*k, Tensor::new(sk.to_vec(), gk).expect("shape")));
                }
                out
            }
            Op::MaxPool2d { x, argmax } => {
                let mut gx = Tensor::zeros(self.shape(*x).to_vec());
                let d = gx.data_mut();
                for (&i, &gv) in argmax.iter().zip(gd) {
                    d[i] = d[i] + gv;
                }
                vec![(*x, gx)]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = self.shape(*x);
                let (n, c) = (s[0], s[1]);
                let spatial: usize = s[2..].iter().product();
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                        dgamma[ch] = dgamma[ch] + dot(&gd[r.clone()], &xhat[r.clone()]);
                        dbeta[ch] = dbeta[ch] + sum(&gd[r]);
                    }
                }
                let m = T::of((n * spatial) as f64);
                let mut dx = vec![T::zero(); gd.len()];
                for b in 0..n {
                    for ch in 0..c {
                        // With dxhat = g·gamma: sum(dxhat) = gamma·dbeta and
                        // sum(dxhat·xhat) = gamma·dgamma.
                        let scale = gm[ch] * inv_std[ch] / m;
                        let (db, dg) = (dbeta[ch], dgamma[ch]);
                        let r = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                        for ((d, &gv), &xh) in
                            dx[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xhat[r])
                        {
                            *d = scale * (m * gv - db - xh * dg);
                        }
                    }
                }
                vec![
                    (*x, Tensor::new(s.to_vec(), dx).expect("shape")),
                    (
                        *gamma,
                        Tensor::new(self.shape(*gamma).to_vec(), dgamma).expect("shape"),
                    ),
                    (
                        *beta,
                        Tensor::new(self.shape(*beta).to_vec(), dbeta).expect("shape"),
                    ),
                ]
            }
            Op::BatchNormEval {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = self.shape(*x);
                let (n, c) = (s[0], s[1]);
                let spatial: usize = s[2..].iter().product();
                let gm = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); gd.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * spatial..(b * c + ch + 1) * spatial;
                        let k = gm[ch] * inv_std[ch];
                        dgamma[ch] = dgamma[ch] + dot(&gd[r.clone()], &xhat[r.clone()]);
                        dbeta[ch] = dbeta[ch] + sum(&gd[r.clone()]);
                        for (d, &gv) in dx[r.clone()].iter_mut().zip(&gd[r]) {
                            *d = gv * k;
                        }
                    }
                }
                vec![
                    (*x, Tensor::new(s.to_vec(), dx).expect("shape")),
                    (
                        *gamma,
                        Tensor::new(self.shape(*gamma).to_vec(), dgamma).expect("shape"),
                    ),
                    (
                        *beta,
                        Tensor::new(self.shape(*beta).to_vec(), dbeta).expect("shape"),
                    ),
                ]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let s = self.shape(*x);
                let d = *s.last().expect("rank ≥ 1");
                let gm = self.value(*gamma).data();
                let dn = T::of(d as f64);
                let mut dgamma = vec![T::zero(); d];
                let mut dbeta = vec![T::zero(); d];
                let mut dx = vec![T::zero(); gd.len()];
                let mut dxhat = vec![T::zero(); d];
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = &gd[r * d..(r + 1) * d];
                    let xr = &xhat[r * d..(r + 1) * d];
                    let mut sum_dxh = T::zero();
                    let mut sum_dxh_xh = T::zero();
                    for j in 0..d {
                        dgamma[j] = dgamma[j] + gr[j] * xr[j];
                        dbeta[j] = dbeta[j] + gr[j];
                        dxhat[j] = gr[j] * gm[j];
                        sum_dxh = sum_dxh + dxhat[j];
                        sum_dxh_xh = sum_dxh_xh + dxhat[j] * xr[j];
                    }
                    for j in 0..d {
                        dx[r * d + j] = is / dn * (dn * dxhat[j] - sum_dxh - xr[j] * sum_dxh_xh);
                    }
                }
                vec![
                    (*x, Tensor::new(s.to_vec(), dx).expect("shape")),
                    (
                        *gamma,
                        Tensor::new(self.shape(*gamma).to_vec(), dgamma).expect("shape"),
                    ),
                    (
                        *beta,
                        Tensor::new(self.shape(*beta).to_vec(), dbeta).expect("shape"),
                    ),
                ]
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let data = gd
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), data).expect("shape"))]
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let data = gd
                    .iter()
                    .zip(y)
                    .map(|(&gv, &s)| gv * s * (T::one() - s))
                    .collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), data).expect("shape"))]
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = *g.shape().last().expect("rank ≥ 1");
                let mut data = vec![T::zero(); gd.len()];
                for ((dst, gr), yr) in data.chunks_mut(d).zip(gd.chunks(d)).zip(y.chunks(d)) {
                    let dotp: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dotp);
                    }
                }
                vec![(*x, Tensor::new(g.shape().to_vec(), data).expect("shape"))]
            }
            Op::Dropout { x, mask } => {
                let data = gd.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                vec![(*x, Tensor::new(g.shape().to_vec(), data).expect("shape"))]
            }
            Op::Bce {
                pred,
                targets,
                clamped,
            } => {
                // Gradient evaluated at the clamped probability so saturated
                // outputs still receive a learning signal.
                let scale = gd[0] / T::of(targets.len() as f64);
                let data = clamped
                    .iter()
                    .zip(targets)
                    .map(|(&q, &y)| scale * (q - y) / (q * (T::one() - q)))
                    .collect();
                vec![(
                    *pred,
                    Tensor::new(self.shape(*pred).to_vec(), data).expect("shape"),
                )]
            }
            _ => unreachable!("basic op routed to backprop_nn"),
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::of(BCE_CLAMP);
    let hi = T::one() - lo;
    p.max(lo).min(hi)
}

#[inline]
pub(crate) fn bce_term<T: Scalar>(y: T, q: T) -> T {
    -(y * q.ln() + (T::one() - y) * (T::one() - q).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_unit_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn([1, 1, 3, 5], |i| i as f64 - 4.0));
        let k = g.constant(Tensor::ones([1, 1, 1, 1]));
        let y = g.conv2d(x, k, Padding::Same).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn same_padding_keeps_extent_valid_shrinks() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([2, 3, 5, 9]));
        let k = g.constant(Tensor::zeros([4, 3, 3, 4]));
        let same = g.conv2d(x, k, Padding::Same).unwrap();
        assert_eq!(g.shape(same), &[2, 4, 5, 9]);
        let valid = g.conv2d(x, k, Padding::Valid).unwrap();
        assert_eq!(g.shape(valid), &[2, 4, 3, 6]);
        let big = g.constant(Tensor::zeros([1, 3, 7, 2]));
        assert!(g.conv2d(x, big, Padding::Valid).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut g = Graph::<f64>::new();
        let xv = Tensor::from_fn([1, 1, 1, 5], |i| (i + 1) as f64);
        let x = g.constant(xv);
        let k = g.constant(Tensor::new([1, 1, 1, 3], vec![1.0, 10.0, 100.0]).unwrap());
        let y = g.conv2d(x, k, Padding::Same).unwrap();
        // pad_left = 1: out[i] = x[i-1] + 10 x[i] + 100 x[i+1]
        assert_eq!(g.value(y).data(), &[210.0, 321.0, 432.0, 543.0, 54.0]);
    }

    #[test]
    fn pool_floor_and_tie_rule() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::ones([1, 1, 1, 85]));
        let y = g.max_pool2d(x, (1, 6)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 14]);
        let s = g.sum_all(y);
        g.backward(s).unwrap();
        let gx = g.grad(x).unwrap().data();
        for (i, &v) in gx.iter().enumerate() {
            let expect = if i % 6 == 0 && i < 84 { 1.0 } else { 0.0 };
            assert_eq!(v, expect, "index {i}");
        }
        assert!(g.max_pool2d(x, (0, 2)).is_err());
    }

    #[test]
    fn batch_norm_requires_two_samples() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones([1, 2, 1, 3]));
        let gm = g.constant(Tensor::ones([2]));
        let bt = g.constant(Tensor::zeros([2]));
        assert!(g.batch_norm_train(x, gm, bt).is_err());
    }

    #[test]
    fn layer_norm_small_cases() {
        let mut g = Graph::<f64>::new();
        let gm = g.constant(Tensor::ones([2]));
        let bt = g.constant(Tensor::zeros([2]));
        let x = g.constant(Tensor::new([2], vec![1.0, 3.0]).unwrap());
        let y = g.layer_norm(x, gm, bt).unwrap();
        let v = g.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
        let c = g.constant(Tensor::full([2], 4.0));
        let y = g.layer_norm(c, gm, bt).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn activations_basic_values() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros([1, 2]));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let sm = g.softmax(z).unwrap();
        assert_eq!(g.value(sm).data(), &[0.5, 0.5]);
        let mut rng = Rng::new(0);
        assert!(g.dropout(z, 1.0, Mode::Train, &mut rng).is_err());
        assert!(g.dropout(z, -0.1, Mode::Train, &mut rng).is_err());
        assert_eq!(g.dropout(z, 0.5, Mode::Eval, &mut rng).unwrap(), z);
    }

    #[test]
    fn bce_rejects_non_binary_targets() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::full([2], 0.5));
        assert!(g.bce(p, &[0.0, 0.5]).is_err());
        assert!(g.bce(p, &[1.0]).is_err());
    }
}
