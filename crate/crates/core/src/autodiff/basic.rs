//! Shape-generic operations: broadcasting arithmetic, matmul, layout, and
//! reductions.

use std::ops::Range;

use super::kernels::{broadcast_offsets, broadcast_shape, gemm, gemm_nt, gemm_tn};
use super::{invalid_arg as invalid, Graph, GraphError, Node, Op, Var};
use crate::error::ShapeError;
use crate::scalar::Scalar;
use crate::tensor::{strides, Tensor};

#[derive(Clone, Copy)]
enum Arith {
    Add,
    Sub,
    Mul,
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, Arith::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, Arith::Sub)
    }

    /// Element-wise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        self.binary(a, b, Arith::Mul)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Arith) -> Result<Var, GraphError> {
        let (name, f): (&'static str, fn(T, T) -> T) = match kind {
            Arith::Add => ("add", |x, y| x + y),
            Arith::Sub => ("sub", |x, y| x - y),
            Arith::Mul => ("mul", |x, y| x * y),
        };
        let va = self.value(a);
        let vb = self.value(b);
        let value = if va.shape() == vb.shape() {
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else {
            let shape = broadcast_shape(va.shape(), vb.shape())
                .ok_or_else(|| axis_mismatch(name, va.shape(), vb.shape()))?;
            let oa = broadcast_offsets(va.shape(), &shape);
            let ob = broadcast_offsets(vb.shape(), &shape);
            let (da, db) = (va.data(), vb.data());
            let data = oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect();
            Tensor::new(shape, data)?
        };
        let rg = self.any_grad(&[a, b]);
        let op = match kind {
            Arith::Add => Op::Add(a, b),
            Arith::Sub => Op::Sub(a, b),
            Arith::Mul => Op::Mul(a, b),
        };
        Ok(self.push(value, rg, op))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.any_grad(&[x]);
        self.push(value, rg, Op::Scale(x, factor))
    }

    /// Matrix product over the last two axes. `b` is either a matrix shared
    /// across all leading (batch) axes of `a`, or has the same batch axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GraphError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let geom = MatmulGeom::new(&sa, &sb)?;
        let mut out = vec![T::zero(); geom.batch * geom.n * geom.m];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for bi in 0..geom.batch {
            gemm(
                &da[bi * geom.n * geom.k..],
                &db[geom.b_offset(bi)..],
                &mut out[bi * geom.n * geom.m..(bi + 1) * geom.n * geom.m],
                geom.n,
                geom.k,
                geom.m,
            );
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([geom.n, geom.m]);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::MatMul(a, b)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, GraphError> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Reshape(x)))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var, GraphError> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(invalid(
                "permute",
                format!("{axes:?} is not a permutation of the axes of {shape:?}"),
            ));
        }
        let value = permute_tensor(self.value(x), axes);
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, rg, Op::Permute(x, axes.to_vec())))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a0: usize, a1: usize) -> Result<Var, GraphError> {
        let rank = self.shape(x).len();
        if a0 >= rank || a1 >= rank {
            return Err(ShapeError::AxisOutOfRange {
                op: "transpose",
                axis: a0.max(a1),
                shape: self.shape(x).to_vec(),
            }
            .into());
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a0, a1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, GraphError> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(ShapeError::AxisOutOfRange {
                op: "concat",
                axis,
                shape: base,
            }
            .into());
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() {
                return Err(ShapeError::Rank {
                    op: "concat",
                    expected: base.len(),
                    shape: s.to_vec(),
                }
                .into());
            }
            if let Some(ax) = (0..s.len()).find(|&i| i != axis && s[i] != base[i]) {
                return Err(ShapeError::Axis {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                    axis: ax,
                    a: base[ax],
                    b: s[ax],
                }
                .into());
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor::new(shape, data)?,
            rg,
            Op::Concat(parts.to_vec(), axis),
        ))
    }

    /// `x[.., range, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, range: Range<usize>) -> Result<Var, GraphError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(ShapeError::AxisOutOfRange {
                op: "slice",
                axis,
                shape,
            }
            .into());
        }
        if range.start > range.end || range.end > shape[axis] {
            return Err(invalid(
                "slice",
                format!(
                    "range {range:?} exceeds extent {} of axis {axis}",
                    shape[axis]
                ),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = range.end - range.start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + range.start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            rg,
            Op::Slice {
                x,
                axis,
                start: range.start,
            },
        ))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var, GraphError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(ShapeError::AxisOutOfRange {
                op: "mean",
                axis,
                shape,
            }
            .into());
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); outer * inner];
        let inv = T::one() / T::of(len as f64);
        for o in 0..outer {
            let dst = &mut data[o * inner..(o + 1) * inner];
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
            dst.iter_mut().for_each(|d| *d = *d * inv);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(out_shape, data)?, rg, Op::Mean(x, Some(axis))))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / T::of(v.len() as f64);
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(m), rg, Op::Mean(x, None))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::Sum(x))
    }

    /// Maximum over `axis` (removed from the shape). Ties go to the first
    /// index.
    pub fn max(&mut self, x: Var, axis: usize) -> Result<Var, GraphError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(ShapeError::AxisOutOfRange {
                op: "max",
                axis,
                shape,
            }
            .into());
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = (o * len) * inner + i;
                for l in 1..len {
                    let off = (o * len + l) * inner + i;
                    if src[off] > src[best] {
                        best = off;
                    }
                }
                data.push(src[best]);
                argmax.push(best);
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::new(out_shape, data)?, rg, Op::Max { x, argmax }))
    }

    pub(super) fn backprop_basic(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let out_shape = node.value.shape();
        match &node.op {
            Op::Add(a, b) => vec![
                (*a, reduce_to(g, self.shape(*a))),
                (*b, reduce_to(g, self.shape(*b))),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(g, self.shape(*a))),
                (*b, reduce_to(&g.map(|v| -v), self.shape(*b))),
            ],
            Op::Mul(a, b) => {
                let mut out = Vec::new();
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if !self.requires_grad(target) {
                        continue;
                    }
                    let ov = self.value(other);
                    let prod = if ov.shape() == out_shape {
                        Tensor::new(
                            out_shape.to_vec(),
                            g.data()
                                .iter()
                                .zip(ov.data())
                                .map(|(&x, &y)| x * y)
                                .collect(),
                        )
                        .expect("same shape")
                    } else {
                        let offs = broadcast_offsets(ov.shape(), out_shape);
                        let od = ov.data();
                        Tensor::new(
                            out_shape.to_vec(),
                            g.data()
                                .iter()
                                .zip(&offs)
                                .map(|(&x, &o)| x * od[o])
                                .collect(),
                        )
                        .expect("same shape")
                    };
                    out.push((target, reduce_to(&prod, self.shape(target))));
                }
                out
            }
            Op::Scale(x, factor) => vec![(*x, g.map(|v| v * *factor))],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let geom = MatmulGeom::new(sa, sb).expect("validated in forward");
                let (da, db, dg) = (self.value(*a).data(), self.value(*b).data(), g.data());
                let mut out = Vec::new();
                if self.requires_grad(*a) {
                    let mut ga = vec![T::zero(); da.len()];
                    for bi in 0..geom.batch {
                        gemm_nt(
                            &dg[bi * geom.n * geom.m..],
                            &db[geom.b_offset(bi)..],
                            &mut ga[bi * geom.n * geom.k..(bi + 1) * geom.n * geom.k],
                            geom.n,
                            geom.k,
                            geom.m,
                        );
                    }
                    out.push((*a, Tensor::new(sa.to_vec(), ga).expect("shape")));
                }
                if self.requires_grad(*b) {
                    let mut gb = vec![T::zero(); db.len()];
                    for bi in 0..geom.batch {
                        let off = geom.b_offset(bi);
                        gemm_tn(
                            &da[bi * geom.n * geom.k..],
                            &dg[bi * geom.n * geom.m..],
                            &mut gb[off..off + geom.k * geom.m],
                            geom.n,
                            geom.k,
                            geom.m,
                        );
                    }
                    out.push((*b, Tensor::new(sb.to_vec(), gb).expect("shape")));
                }
                out
            }
            Op::Reshape(x) => vec![(
                *x,
                g.clone()
                    .reshape(self.shape(*x).to_vec())
                    .expect("size preserved"),
            )],
            Op::Permute(x, axes) => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                vec![(*x, permute_tensor(g, &inverse))]
            }
            Op::Concat(parts, axis) => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[*axis] * inner;
                let mut start = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let s = self.shape(p);
                    let chunk = s[*axis] * inner;
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            data.extend_from_slice(
                                &g.data()[o * total + start..o * total + start + chunk],
                            );
                        }
                        out.push((p, Tensor::new(s.to_vec(), data).expect("shape")));
                    }
                    start += chunk;
                }
                out
            }
            Op::Slice { x, axis, start } => {
                let src_shape = self.shape(*x);
                let (outer, full, inner) = split_axis(src_shape, *axis);
                let len = out_shape[*axis];
                let mut data = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    data[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, Tensor::new(src_shape.to_vec(), data).expect("shape"))]
            }
            Op::Mean(x, None) => {
                let s = self.shape(*x);
                let n: usize = s.iter().product();
                let v = g.data()[0] / T::of(n as f64);
                vec![(*x, Tensor::full(s.to_vec(), v))]
            }
            Op::Mean(x, Some(axis)) => {
                let s = self.shape(*x);
                let (outer, len, inner) = split_axis(s, *axis);
                let inv = T::one() / T::of(len as f64);
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let row = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        data.extend(row.iter().map(|&v| v * inv));
                    }
                }
                vec![(*x, Tensor::new(s.to_vec(), data).expect("shape"))]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x).to_vec(), g.data()[0]))],
            Op::Max { x, argmax } => {
                let mut gx = Tensor::zeros(self.shape(*x).to_vec());
                let d = gx.data_mut();
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    d[i] = d[i] + gv;
                }
                vec![(*x, gx)]
            }
            _ => unreachable!("non-basic op routed to backprop_basic"),
        }
    }
}

fn axis_mismatch(op: &'static str, a: &[usize], b: &[usize]) -> GraphError {
    let rank = a.len().max(b.len());
    let ext = |s: &[usize], i: usize| {
        if i + s.len() >= rank {
            s[i + s.len() - rank]
        } else {
            1
        }
    };
    let axis = (0..rank)
        .find(|&i| {
            let (x, y) = (ext(a, i), ext(b, i));
            x != y && x != 1 && y != 1
        })
        .unwrap_or(0);
    ShapeError::Axis {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
        axis,
        a: ext(a, axis),
        b: ext(b, axis),
    }
    .into()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

/// Sums a broadcast gradient back down to an operand's shape.
fn reduce_to<T: Scalar>(g: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g.clone();
    }
    let offs = broadcast_offsets(target, g.shape());
    let mut out = Tensor::zeros(target.to_vec());
    let d = out.data_mut();
    for (&o, &v) in offs.iter().zip(g.data()) {
        d[o] = d[o] + v;
    }
    out
}

pub(crate) fn permute_tensor<T: Scalar>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let shape = x.shape();
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let pstrides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let rank = out_shape.len();
    let total = x.len();
    let src = x.data();
    let mut data = Vec::with_capacity(total);
    if rank == 0 || total == 0 {
        return Tensor::new(out_shape, src.to_vec()).expect("shape");
    }
    let last = rank - 1;
    let (last_n, last_s) = (out_shape[last], pstrides[last]);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let rows = total / last_n.max(1);
    for _ in 0..rows {
        for j in 0..last_n {
            data.push(src[off + j * last_s]);
        }
        for ax in (0..last).rev() {
            idx[ax] += 1;
            off += pstrides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= pstrides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, data).expect("permutation preserves size")
}

struct MatmulGeom {
    batch: usize,
    n: usize,
    k: usize,
    m: usize,
    shared_b: bool,
}

impl MatmulGeom {
    fn new(sa: &[usize], sb: &[usize]) -> Result<Self, GraphError> {
        if sa.len() < 2 {
            return Err(ShapeError::Rank {
                op: "matmul",
                expected: 2,
                shape: sa.to_vec(),
            }
            .into());
        }
        if sb.len() != 2 && sb.len() != sa.len() {
            return Err(ShapeError::Rank {
                op: "matmul",
                expected: sa.len(),
                shape: sb.to_vec(),
            }
            .into());
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, m) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(ShapeError::Axis {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
                axis: sa.len() - 1,
                a: k,
                b: kb,
            }
            .into());
        }
        let shared_b = sb.len() == 2;
        if !shared_b {
            if let Some(ax) = (0..sa.len() - 2).find(|&i| sa[i] != sb[i]) {
                return Err(ShapeError::Axis {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                    axis: ax,
                    a: sa[ax],
                    b: sb[ax],
                }
                .into());
            }
        }
        Ok(Self {
            batch: sa[..sa.len() - 2].iter().product(),
            n,
            k,
            m,
            shared_b,
        })
    }

    fn b_offset(&self, bi: usize) -> usize {
        if self.shared_b {
            0
        } else {
            bi * self.k * self.m
        }
    }
}
