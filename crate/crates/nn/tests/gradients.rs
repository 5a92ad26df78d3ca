//! Finite-difference verification for every differentiable operation, plus a
//! convex-descent sanity check for the optimizer.

use d2cl_nn::gradcheck::grad_check;
use d2cl_nn::init::seeded_rng;
use d2cl_nn::layers::{self, BnStats};
use d2cl_nn::loss::bce_with_logits;
use d2cl_nn::optim::{adam_step, AdamState, ParamSet};
use d2cl_nn::{conv, ops, Tape, Tensor};
use rand::Rng;

fn random_tensor(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<f64> {
    let count: usize = shape.iter().product();
    let data = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Random tensor bounded away from zero, for kink-free PReLU checks.
fn random_offset_tensor(shape: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> Tensor<f64> {
    let count: usize = shape.iter().product();
    let data = (0..count)
        .map(|_| {
            let v: f64 = rng.random_range(0.25..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[test]
fn affine_layer_gradients() {
    let mut rng = seeded_rng(101, 0);
    let x = random_tensor(&[3, 4], &mut rng);
    let w = random_tensor(&[4, 5], &mut rng);
    let b = random_tensor(&[5], &mut rng);
    let err = grad_check(&[x, w, b], 1e-5, None, |tape, v| {
        let y = ops::matmul(tape, v[0], v[1]).unwrap();
        let y = ops::add_bias_row(tape, y, v[2]).unwrap();
        let y = ops::mul(tape, y, y);
        ops::mean_all(tape, y)
    });
    assert!(err < 1e-7, "affine rel err {}", err);
}

#[test]
fn conv2d_gradients() {
    let mut rng = seeded_rng(102, 0);
    let x = random_tensor(&[2, 3, 6, 6], &mut rng);
    let k = random_tensor(&[4, 3, 3, 3], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let err = grad_check(&[x, k, b], 1e-5, None, |tape, v| {
        let y = conv::conv2d(tape, v[0], v[1], 2, 1).unwrap();
        let y = ops::add_bias_chan(tape, y, v[2]).unwrap();
        let y = ops::tanh(tape, y);
        ops::mean_all(tape, y)
    });
    assert!(err < 1e-6, "conv2d rel err {}", err);
}

#[test]
fn conv1d_gradients() {
    let mut rng = seeded_rng(103, 0);
    let x = random_tensor(&[2, 2, 9], &mut rng);
    let k = random_tensor(&[3, 2, 3], &mut rng);
    let err = grad_check(&[x, k], 1e-5, None, |tape, v| {
        let y = conv::conv1d(tape, v[0], v[1], 2).unwrap();
        let y = ops::mul(tape, y, y);
        ops::mean_all(tape, y)
    });
    assert!(err < 1e-6, "conv1d rel err {}", err);
}

#[test]
fn prelu_gradients_away_from_kink() {
    let mut rng = seeded_rng(104, 0);
    let x = random_offset_tensor(&[2, 3, 4], &mut rng);
    let a = Tensor::from_vec(vec![0.21, 0.37, 0.11]);
    let err = grad_check(&[x, a], 1e-5, None, |tape, v| {
        let y = layers::prelu(tape, v[0], v[1]);
        ops::mean_all(tape, y)
    });
    assert!(err < 1e-7, "prelu rel err {}", err);
}

#[test]
fn prelu_slope_gradient_matches_finite_difference() {
    // At x = -2 the slope gradient is -2 * upstream; checked numerically.
    let x = Tensor::new(vec![1, 1, 1], vec![-2.0]);
    let a = Tensor::from_vec(vec![0.25]);
    let err = grad_check(&[x, a], 1e-6, None, |tape, v| {
        let y = layers::prelu(tape, v[0], v[1]);
        ops::sum_all(tape, y)
    });
    assert!(err < 1e-8, "prelu slope rel err {}", err);
}

#[test]
fn batch_norm_gradients_training_mode() {
    let mut rng = seeded_rng(105, 0);
    let x = random_tensor(&[4, 3, 5], &mut rng);
    let gamma = random_offset_tensor(&[3], &mut rng);
    let beta = random_tensor(&[3], &mut rng);
    let err = grad_check(&[x, gamma, beta], 1e-5, None, |tape, v| {
        let mut stats = BnStats::new(3);
        let y = layers::batch_norm(tape, v[0], v[1], v[2], &mut stats, true, 0.1, 1e-5).unwrap();
        let y = ops::mul(tape, y, y);
        ops::mean_all(tape, y)
    });
    assert!(err < 1e-6, "batch_norm rel err {}", err);
}

#[test]
fn graph_conv_gradients() {
    let mut rng = seeded_rng(106, 0);
    let mut adj = Tensor::<f64>::zeros(&[4, 4]);
    for (i, j) in [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (0, 3), (3, 0)] {
        adj.data_mut()[i * 4 + j] = 1.0;
    }
    let norm = layers::normalized_adjacency(&adj);
    let z = random_tensor(&[4, 5], &mut rng);
    let w = random_tensor(&[5, 3], &mut rng);
    let err = grad_check(&[z, w], 1e-5, None, |tape, v| {
        let a = tape.constant(norm.clone());
        let y = layers::graph_conv(tape, a, v[0], v[1]).unwrap();
        ops::mean_all(tape, y)
    });
    assert!(err < 1e-7, "graph_conv rel err {}", err);
}

#[test]
fn sort_pool_gradients_with_distinct_keys() {
    // Distinct sort keys keep the selection stable under the probe step.
    let z = Tensor::new(
        vec![4, 3],
        vec![
            0.11, -0.42, 0.90, //
            0.52, 0.33, 0.10, //
            -0.77, 0.25, 0.50, //
            0.40, -0.10, -0.30,
        ],
    );
    let err = grad_check(&[z], 1e-6, None, |tape, v| {
        let y = layers::sort_pool(tape, v[0], 2);
        let y = ops::mul(tape, y, y);
        ops::sum_all(tape, y)
    });
    assert!(err < 1e-6, "sort_pool rel err {}", err);
}

#[test]
fn sort_pool_padding_path_gradients() {
    let z = Tensor::new(vec![2, 2], vec![0.3, 0.9, -0.4, 0.1]);
    let err = grad_check(&[z], 1e-6, None, |tape, v| {
        let y = layers::sort_pool(tape, v[0], 4);
        let y = ops::mul(tape, y, y);
        ops::sum_all(tape, y)
    });
    assert!(err < 1e-6, "sort_pool padding rel err {}", err);
}

#[test]
fn bce_with_logits_gradients() {
    let z = Tensor::from_vec(vec![0.8, -1.4, 0.05, 2.2]);
    let labels = Tensor::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
    let err = grad_check(&[z], 1e-5, None, |tape, v| {
        bce_with_logits(tape, v[0], &labels)
    });
    assert!(err < 1e-8, "bce rel err {}", err);
}

#[test]
fn global_avg_pool_gradients() {
    let mut rng = seeded_rng(107, 0);
    let x = random_tensor(&[2, 3, 4, 4], &mut rng);
    let err = grad_check(&[x], 1e-5, None, |tape, v| {
        let y = layers::global_avg_pool2d(tape, v[0]).unwrap();
        let y = ops::mul(tape, y, y);
        ops::mean_all(tape, y)
    });
    assert!(err < 1e-8, "pool rel err {}", err);
}

#[test]
fn composite_convolutional_block_gradients() {
    // norm -> PReLU -> 1x1 conv -> norm -> PReLU -> 3x3 conv -> skip add -> pool -> linear
    let mut rng = seeded_rng(108, 0);
    let x = random_tensor(&[3, 2, 5, 5], &mut rng);
    let g1 = random_offset_tensor(&[2], &mut rng);
    let b1 = random_tensor(&[2], &mut rng);
    let a1 = Tensor::from_vec(vec![0.25, 0.3]);
    let k1 = random_tensor(&[2, 2, 1, 1], &mut rng);
    let k2 = random_tensor(&[2, 2, 3, 3], &mut rng);
    let w = random_tensor(&[2, 2], &mut rng);
    let inputs = vec![x, g1, b1, a1, k1, k2, w];
    let err = grad_check(&inputs, 1e-5, Some(60), |tape, v| {
        let mut stats = BnStats::new(2);
        let h = layers::batch_norm(tape, v[0], v[1], v[2], &mut stats, true, 0.1, 1e-5).unwrap();
        let h = layers::prelu(tape, h, v[3]);
        let h = conv::conv2d(tape, h, v[4], 1, 0).unwrap();
        let h = conv::conv2d(tape, h, v[5], 1, 1).unwrap();
        let h = ops::add(tape, h, v[0]);
        let h = layers::global_avg_pool2d(tape, h).unwrap();
        let h = ops::matmul(tape, h, v[6]).unwrap();
        let h = ops::tanh(tape, h);
        ops::mean_all(tape, h)
    });
    assert!(err < 1e-4, "composite block rel err {}", err);
}

#[test]
fn adam_descends_convex_logistic_fixture() {
    // Logistic regression on a fixed separable-ish dataset: loss must be
    // essentially non-increasing over 200 steps (a few tolerated upticks).
    let mut rng = seeded_rng(109, 0);
    let n = 32;
    let dim = 4;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let label = rng.random_bool(0.5);
        let shift = if label { 0.8 } else { -0.8 };
        for _ in 0..dim {
            xs.push(rng.random_range(-1.0..1.0) + shift);
        }
        ys.push(if label { 1.0 } else { 0.0 });
    }
    let x = Tensor::new(vec![n, dim], xs);
    let labels = Tensor::from_vec(ys);

    let mut params = ParamSet::<f64>::new();
    let w = params.push("w", Tensor::zeros(&[dim, 1]));
    let b = params.push("b", Tensor::zeros(&[1]));
    let mut adam = AdamState::new(&params);

    let mut losses = Vec::new();
    for _ in 0..200 {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(params.get(w).clone());
        let bv = tape.param(params.get(b).clone());
        let logits = ops::matmul(&tape, xv, wv).unwrap();
        let logits = ops::add_bias_row(&tape, logits, bv).unwrap();
        let loss = bce_with_logits(&tape, logits, &labels);
        losses.push(tape.value(loss).item());
        tape.backward(loss);
        let grads = vec![tape.grad(wv), tape.grad(bv)];
        adam_step(&mut params, &grads, &mut adam, 0.05, 0.0);
    }
    let violations = losses.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
    assert!(
        violations <= losses.len() / 20,
        "{} increasing steps out of {}",
        violations,
        losses.len()
    );
    assert!(losses.last().unwrap() < &(losses[0] * 0.5));
}

#[test]
fn training_steps_are_deterministic() {
    let run = || {
        let mut rng = seeded_rng(110, 0);
        let x = random_tensor(&[8, 3], &mut rng);
        let labels = Tensor::from_vec((0..8).map(|i| (i % 2) as f64).collect());
        let mut params = ParamSet::<f64>::new();
        let w = params.push("w", random_tensor(&[3, 1], &mut rng));
        let mut adam = AdamState::new(&params);
        let mut trace = Vec::new();
        for _ in 0..20 {
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.param(params.get(w).clone());
            let logits = ops::matmul(&tape, xv, wv).unwrap();
            let loss = bce_with_logits(&tape, logits, &labels);
            trace.push(tape.value(loss).item());
            tape.backward(loss);
            let grads = vec![tape.grad(wv)];
            adam_step(&mut params, &grads, &mut adam, 0.01, 1e-4);
        }
        trace
    };
    assert_eq!(run(), run());
}
