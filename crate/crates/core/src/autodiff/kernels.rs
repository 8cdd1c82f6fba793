//! Inner loops shared by the graph operations. Every loop keeps its
//! innermost index contiguous so the compiler can vectorize it.

use crate::scalar::Scalar;

/// `c[n×m] += a[n×k] · b[k×m]`
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[n×k] += g[n×m] · b[k×m]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(g: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let brow = &b[p * m..(p + 1) * m];
            c[i * k + p] = c[i * k + p] + dot(grow, brow);
        }
    }
}

/// `c[k×m] += a[n×k]ᵀ · g[n×m]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], g: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv = *cv + av * gv;
            }
        }
    }
}

/// Lanes of partial sums in the reductions below. Independent accumulators
/// let the compiler keep several vector registers in flight without
/// reassociation flags.
const LANES: usize = 16;

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut acc = [T::zero(); LANES];
    let chunks = n / LANES;
    for c in 0..chunks {
        let (xa, xb) = (
            &a[c * LANES..(c + 1) * LANES],
            &b[c * LANES..(c + 1) * LANES],
        );
        for l in 0..LANES {
            acc[l] = acc[l] + xa[l] * xb[l];
        }
    }
    let mut s = fold(&acc);
    for j in chunks * LANES..n {
        s = s + a[j] * b[j];
    }
    s
}

#[inline]
fn fold<T: Scalar>(acc: &[T; LANES]) -> T {
    let mut half = [T::zero(); LANES / 2];
    for l in 0..LANES / 2 {
        half[l] = acc[l] + acc[l + LANES / 2];
    }
    ((half[0] + half[4]) + (half[1] + half[5])) + ((half[2] + half[6]) + (half[3] + half[7]))
}

/// `out[o] += Σ_j taps[j]·x[o + j]` for every `o` in `out`; `x` must hold
/// `out.len() + taps.len() − 1` values.
#[inline]
fn correlate_row<T: Scalar>(x: &[T], taps: &[T], out: &mut [T]) {
    let blocks = out.len() / LANES;
    for blk in 0..blocks {
        let o = blk * LANES;
        let mut acc = [T::zero(); LANES];
        acc.copy_from_slice(&out[o..o + LANES]);
        for (j, &kv) in taps.iter().enumerate() {
            let xs = &x[o + j..o + j + LANES];
            for l in 0..LANES {
                acc[l] = acc[l] + kv * xs[l];
            }
        }
        out[o..o + LANES].copy_from_slice(&acc);
    }
    for o in blocks * LANES..out.len() {
        let mut a = out[o];
        for (j, &kv) in taps.iter().enumerate() {
            a = a + kv * x[o + j];
        }
        out[o] = a;
    }
}

#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let xa = &a[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            acc[l] = acc[l] + xa[l];
        }
    }
    a[chunks * LANES..].iter().fold(fold(&acc), |s, &v| s + v)
}

/// `Σ (a_i − mu)²`
#[inline]
pub(crate) fn sq_dev_sum<T: Scalar>(a: &[T], mu: T) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let xa = &a[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            let d = xa[l] - mu;
            acc[l] = acc[l] + d * d;
        }
    }
    a[chunks * LANES..]
        .iter()
        .fold(fold(&acc), |s, &v| s + (v - mu) * (v - mu))
}

/// Geometry of a 2-D cross-correlation over `N×C×H×W` input.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// Width of an input row once padded so every tap of every output
    /// column reads inside it.
    #[inline]
    fn padded_width(&self) -> usize {
        self.ow + self.kw - 1
    }

    /// Copies `row` into `dst` at offset `pad_left`, zeros elsewhere.
    #[inline]
    fn pad_row<T: Scalar>(&self, row: &[T], dst: &mut [T]) {
        let lo = self.pad_left.min(dst.len());
        let hi = (self.pad_left + row.len()).min(dst.len());
        dst[..lo].iter_mut().for_each(|v| *v = T::zero());
        dst[lo..hi].copy_from_slice(&row[..hi - lo]);
        dst[hi..].iter_mut().for_each(|v| *v = T::zero());
    }

    #[inline]
    fn input_row(&self, oy: usize, i: usize) -> Option<usize> {
        let y = oy + i;
        if y < self.pad_top || y - self.pad_top >= self.h {
            None
        } else {
            Some(y - self.pad_top)
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], out: &mut [T], g: &ConvGeom) {
    let mut xp = vec![T::zero(); g.padded_width()];
    for n in 0..g.n {
        for c in 0..g.c {
            let xbase = (n * g.c + c) * g.h * g.w;
            for oy in 0..g.oh {
                for i in 0..g.kh {
                    let Some(y) = g.input_row(oy, i) else {
                        continue;
                    };
                    g.pad_row(&x[xbase + y * g.w..xbase + (y + 1) * g.w], &mut xp);
                    for f in 0..g.f {
                        let kbase = ((f * g.c + c) * g.kh + i) * g.kw;
                        let o = ((n * g.f + f) * g.oh + oy) * g.ow;
                        correlate_row(&xp, &k[kbase..kbase + g.kw], &mut out[o..o + g.ow]);
                    }
                }
            }
        }
    }
}

/// Accumulates the input gradient and/or the kernel gradient.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    k: &[T],
    gout: &[T],
    mut gx: Option<&mut [T]>,
    mut gk: Option<&mut [T]>,
    g: &ConvGeom,
) {
    let pw = g.padded_width();
    let mut xp = vec![T::zero(); pw];
    // Output-gradient row with kw − 1 zeros either side, and the gradient
    // with respect to the padded input row.
    let mut gp = vec![T::zero(); g.ow + 2 * (g.kw - 1)];
    let mut gxp = vec![T::zero(); pw];
    let mut flipped = vec![T::zero(); g.kw];
    for n in 0..g.n {
        for c in 0..g.c {
            let xbase = (n * g.c + c) * g.h * g.w;
            for oy in 0..g.oh {
                for i in 0..g.kh {
                    let Some(y) = g.input_row(oy, i) else {
                        continue;
                    };
                    let xrow = xbase + y * g.w..xbase + (y + 1) * g.w;
                    if gk.is_some() {
                        g.pad_row(&x[xrow.clone()], &mut xp);
                    }
                    gxp.iter_mut().for_each(|v| *v = T::zero());
                    for f in 0..g.f {
                        let kbase = ((f * g.c + c) * g.kh + i) * g.kw;
                        let o = ((n * g.f + f) * g.oh + oy) * g.ow;
                        let grow = &gout[o..o + g.ow];
                        if let Some(gk) = gk.as_deref_mut() {
                            for j in 0..g.kw {
                                gk[kbase + j] = gk[kbase + j] + dot(grow, &xp[j..j + g.ow]);
                            }
                        }
                        if gx.is_some() {
                            gp[g.kw - 1..g.kw - 1 + g.ow].copy_from_slice(grow);
                            for (d, &kv) in
                                flipped.iter_mut().zip(k[kbase..kbase + g.kw].iter().rev())
                            {
                                *d = kv;
                            }
                            correlate_row(&gp, &flipped, &mut gxp);
                        }
                    }
                    if let Some(gx) = gx.as_deref_mut() {
                        let lo = g.pad_left;
                        for (d, &v) in gx[xrow].iter_mut().zip(&gxp[lo..lo + g.w]) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

/// Numpy-style broadcast of two shapes (right-aligned; extent 1 stretches).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat offset of the element of an
/// operand of shape `src` it reads under broadcasting.
pub(crate) fn broadcast_offsets(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let src_strides = crate::tensor::strides(src);
    let mut bstrides = vec![0; rank];
    for (i, bs) in bstrides.iter_mut().enumerate() {
        if i + src.len() >= rank {
            let si = i + src.len() - rank;
            if src[si] != 1 {
                *bs = src_strides[si];
            }
        }
    }
    let total: usize = out_shape.iter().product();
    let mut offsets = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..total {
        offsets.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += bstrides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= bstrides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offsets
}
