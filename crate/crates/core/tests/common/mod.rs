#![allow(dead_code)]

pub mod cases;

use std::collections::BTreeMap;

use tmc_core::autodiff::{Graph, GraphError, Var};
use tmc_core::rng::Rng;
use tmc_core::Tensor;

pub const FD_STEP: f64 = 1e-4;
pub const LINEAR_TOL: f64 = 1e-5;
pub const SMOOTH_TOL: f64 = 1e-4;

pub type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var, GraphError>;

/// Reduces an op output to a scalar with fixed random weights so every output
/// element contributes to the gradient.
fn project(g: &mut Graph<f64>, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let mut rng = Rng::new(0xfeed);
    let w = Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0));
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum_all(p)
}

fn loss_at(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars).unwrap();
    let l = project(&mut g, y);
    g.value(l).data()[0]
}

/// Largest relative error between the analytic gradient and a central
/// difference, over every element of every input.
///
/// The error of one element is `|a − n| / max(|a|, |n|, 1e-2·‖n‖∞)`, where the
/// floor keeps near-zero entries from dominating.
pub fn max_rel_error(inputs: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let y = build(&mut g, &vars).unwrap();
    let l = project(&mut g, y);
    g.backward(l).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|gr| gr.data().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.len()];
        for i in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric[i] = (loss_at(&plus, build) - loss_at(&minus, build)) / (2.0 * FD_STEP);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, n) in analytic[k].iter().zip(&numeric) {
            let denom = a.abs().max(n.abs()).max(1e-2 * scale).max(1e-12);
            worst = worst.max((a - n).abs() / denom);
        }
    }
    worst
}

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.uniform_range(-1.0, 1.0))
}

/// Values at least 0.1 away from zero, so ReLU kinks are never crossed.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.uniform_range(0.1, 1.0);
        if rng.uniform() < 0.5 {
            -m
        } else {
            m
        }
    })
}

/// A shuffled ladder of distinct values 0.1 apart, so max selections are
/// stable under the finite-difference step.
pub fn distinct(shape: &[usize], seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| 0.1 * i as f64 - 0.05 * n as f64).collect();
    Rng::new(seed).shuffle(&mut v);
    Tensor::new(shape.to_vec(), v).unwrap()
}

/// Chi-square(1) survival function through the complementary error function,
/// `P(X > x) = erfc(sqrt(x/2))`, with erfc from the Numerical Recipes
/// Chebyshev fit (fractional error below 1.2e-7).
pub fn chi2_1_sf(x: f64) -> f64 {
    let z = (x / 2.0).sqrt();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    t * poly.exp()
}

/// Two-sided exact binomial p for `min(b, c)` successes out of `b + c` at 1/2,
/// summed term by term.
pub fn exact_binomial_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    let k = b.min(c);
    let mut term = 0.5f64.powi(n as i32);
    let mut total = term;
    for i in 0..k {
        term *= (n - i) as f64 / (i + 1) as f64;
        total += term;
    }
    (2.0 * total).min(1.0)
}

/// Counts per key; a small helper for recount oracles.
pub fn tally<K: Ord + Clone>(items: impl IntoIterator<Item = K>) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for k in items {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

/// P(s⁺ > s⁻) + ½·P(s⁺ = s⁻) over all positive/negative pairs.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Floor-pool chain, written out independently of the model code.
pub fn floor_chain(mut w: usize, pools: &[usize]) -> Vec<usize> {
    let mut out = vec![w];
    for p in pools {
        w /= p;
        out.push(w);
    }
    out
}
