//! One finite-difference case per differentiable op, plus attention and the
//! whole encoder block.

use tmc_core::attention::{
    encoder_block, multi_head_attention, scaled_dot_product_attention, AttentionParams,
    EncoderBlockParams,
};
use tmc_core::autodiff::{Graph, GraphError, Mode, Padding, Var};
use tmc_core::params::{Bindings, ParamSpec, ParamStore};
use tmc_core::rng::Rng;
use tmc_core::Tensor;

use super::{away_from_zero, distinct, random, Build, LINEAR_TOL, SMOOTH_TOL};

pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<Build>,
    pub tol: f64,
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    tol: f64,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var, GraphError> + 'static,
) -> GradCase {
    GradCase {
        name,
        inputs,
        build: Box::new(build),
        tol,
    }
}

/// Parameters for `specs` as inputs, jittered so norms and biases are not
/// at their trivial initial values.
fn spec_inputs(specs: &[ParamSpec], seed: u64) -> Vec<Tensor<f64>> {
    let store = ParamStore::<f64>::from_specs(specs, &mut Rng::new(seed));
    let mut rng = Rng::new(seed + 1);
    store
        .iter()
        .map(|(_, t)| {
            let mut t = t.clone();
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += 0.2 * rng.uniform_range(-1.0, 1.0));
            t
        })
        .collect()
}

fn bindings(specs: &[ParamSpec], vars: &[Var]) -> Bindings {
    let mut b = Bindings::default();
    for (s, &v) in specs.iter().zip(vars) {
        b.insert(s.name.clone(), v);
    }
    b
}

pub fn all() -> Vec<GradCase> {
    let mut cases = vec![
        case(
            "add (broadcast)",
            vec![random(&[3, 4], 1), random(&[4], 2)],
            LINEAR_TOL,
            |g, v| g.add(v[0], v[1]),
        ),
        case(
            "sub (broadcast)",
            vec![random(&[2, 3, 4], 3), random(&[3, 1], 4)],
            LINEAR_TOL,
            |g, v| g.sub(v[0], v[1]),
        ),
        case(
            "mul (broadcast)",
            vec![random(&[3, 4], 5), random(&[1, 4], 6)],
            LINEAR_TOL,
            |g, v| g.mul(v[0], v[1]),
        ),
        case("scale", vec![random(&[5], 7)], LINEAR_TOL, |g, v| {
            Ok(g.scale(v[0], -2.5))
        }),
        case(
            "matmul",
            vec![random(&[3, 4], 8), random(&[4, 2], 9)],
            LINEAR_TOL,
            |g, v| g.matmul(v[0], v[1]),
        ),
        case(
            "matmul (batched)",
            vec![random(&[2, 3, 4], 10), random(&[4, 5], 11)],
            LINEAR_TOL,
            |g, v| g.matmul(v[0], v[1]),
        ),
        case("reshape", vec![random(&[2, 6], 12)], LINEAR_TOL, |g, v| {
            g.reshape(v[0], &[3, 4])
        }),
        case(
            "permute",
            vec![random(&[2, 3, 4], 13)],
            LINEAR_TOL,
            |g, v| g.permute(v[0], &[2, 0, 1]),
        ),
        case(
            "transpose",
            vec![random(&[2, 3, 4], 14)],
            LINEAR_TOL,
            |g, v| g.transpose(v[0], 1, 2),
        ),
        case(
            "concat",
            vec![random(&[2, 3], 15), random(&[2, 2], 16)],
            LINEAR_TOL,
            |g, v| g.concat(&[v[0], v[1]], 1),
        ),
        case("slice", vec![random(&[4, 5], 17)], LINEAR_TOL, |g, v| {
            g.slice(v[0], 1, 1..4)
        }),
        case("mean", vec![random(&[3, 4, 2], 18)], LINEAR_TOL, |g, v| {
            g.mean(v[0], 1)
        }),
        case("mean_all", vec![random(&[3, 4], 19)], LINEAR_TOL, |g, v| {
            Ok(g.mean_all(v[0]))
        }),
        case("sum_all", vec![random(&[3, 4], 20)], LINEAR_TOL, |g, v| {
            Ok(g.sum_all(v[0]))
        }),
        case("max", vec![distinct(&[3, 5], 21)], LINEAR_TOL, |g, v| {
            g.max(v[0], 1)
        }),
        case(
            "relu",
            vec![away_from_zero(&[4, 5], 22)],
            LINEAR_TOL,
            |g, v| Ok(g.relu(v[0])),
        ),
        case(
            "conv2d (same)",
            vec![random(&[2, 2, 4, 5], 23), random(&[3, 2, 3, 2], 24)],
            LINEAR_TOL,
            |g, v| g.conv2d(v[0], v[1], Padding::Same),
        ),
        case(
            "conv2d (valid)",
            vec![random(&[2, 2, 4, 5], 25), random(&[3, 2, 3, 3], 26)],
            LINEAR_TOL,
            |g, v| g.conv2d(v[0], v[1], Padding::Valid),
        ),
        case(
            "max_pool2d",
            vec![distinct(&[2, 2, 4, 7], 27)],
            LINEAR_TOL,
            |g, v| g.max_pool2d(v[0], (2, 3)),
        ),
        case(
            "dropout (train)",
            vec![random(&[4, 6], 28)],
            LINEAR_TOL,
            |g, v| g.dropout(v[0], 0.3, Mode::Train, &mut Rng::new(5)),
        ),
        case("sigmoid", vec![random(&[3, 4], 29)], SMOOTH_TOL, |g, v| {
            Ok(g.sigmoid(v[0]))
        }),
        case("softmax", vec![random(&[3, 5], 30)], SMOOTH_TOL, |g, v| {
            g.softmax(v[0])
        }),
        case(
            "layer_norm",
            vec![random(&[3, 5], 31), random(&[5], 32), random(&[5], 33)],
            SMOOTH_TOL,
            |g, v| g.layer_norm(v[0], v[1], v[2]),
        ),
        case(
            "batch_norm (train)",
            vec![
                random(&[3, 2, 2, 3], 34),
                random(&[2], 35),
                random(&[2], 36),
            ],
            SMOOTH_TOL,
            |g, v| Ok(g.batch_norm_train(v[0], v[1], v[2])?.0),
        ),
        case(
            "batch_norm (eval)",
            vec![random(&[2, 2, 3], 37), random(&[2], 38), random(&[2], 39)],
            LINEAR_TOL,
            |g, v| g.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2], &[0.5, 2.0]),
        ),
        case("bce", vec![probabilities(6, 40)], SMOOTH_TOL, |g, v| {
            g.bce(v[0], &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
        }),
        case(
            "scaled dot-product attention",
            vec![
                random(&[2, 3, 4], 41),
                random(&[2, 5, 4], 42),
                random(&[2, 5, 3], 43),
            ],
            SMOOTH_TOL,
            |g, v| Ok(scaled_dot_product_attention(g, v[0], v[1], v[2])?.0),
        ),
    ];

    let attn_specs = AttentionParams::specs("attn", 8);
    let mut inputs = vec![random(&[2, 3, 8], 44)];
    inputs.extend(spec_inputs(&attn_specs, 45));
    cases.push(case(
        "multi-head attention",
        inputs,
        SMOOTH_TOL,
        move |g, v| {
            let b = bindings(&attn_specs, &v[1..]);
            multi_head_attention(g, v[0], &AttentionParams::bind(&b, "attn", 2))
        },
    ));

    let enc_specs = EncoderBlockParams::specs("enc", 8, 12);
    let mut inputs = vec![random(&[2, 3, 8], 46)];
    inputs.extend(spec_inputs(&enc_specs, 47));
    cases.push(case("encoder block", inputs, SMOOTH_TOL, move |g, v| {
        let b = bindings(&enc_specs, &v[1..]);
        let p = EncoderBlockParams::bind(&b, "enc", 2, 0.1);
        encoder_block(g, v[0], &p, Mode::Train, &mut Rng::new(9))
    }));
    cases
}

fn probabilities(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = Rng::new(seed);
    Tensor::from_fn([n], |_| rng.uniform_range(0.2, 0.8))
}
