//! Layer operations beyond plain convolution: PReLU, batch normalization,
//! graph convolution, SortPooling and global average pooling.

use crate::error::NnError;
use crate::ops;
use crate::tape::{Tape, Value};
use crate::tensor::{Real, Tensor};

/// PReLU: identity for non-negative inputs, `a * x` otherwise. The slope `a`
/// has either one entry (shared) or one entry per channel (axis 1 for rank >= 2,
/// axis-less for rank 1).
pub fn prelu<F: Real>(tape: &Tape<F>, x: Value, a: Value) -> Value {
    let xv = tape.value(x);
    let av = tape.value(a);
    let shape = xv.shape().to_vec();
    let slopes = av.len();
    let (channels, spatial) = channel_layout(&shape);
    assert!(
        slopes == 1 || slopes == channels,
        "prelu slope count {} does not match channel count {}",
        slopes,
        channels
    );
    let slope_of = move |flat: usize| -> usize {
        if slopes == 1 {
            0
        } else {
            (flat / spatial) % channels
        }
    };

    let mut out = xv.clone();
    {
        let od = out.data_mut();
        let ad = av.data();
        for (i, v) in od.iter_mut().enumerate() {
            if *v < F::ZERO {
                *v = ad[slope_of(i)] * *v;
            }
        }
    }
    tape.push_op(
        out,
        vec![x, a],
        Box::new(move |g, _| {
            let gd = g.data();
            let xd = xv.data();
            let ad = av.data();
            let mut dx = Tensor::zeros(xv.shape());
            let mut da = Tensor::zeros(av.shape());
            {
                let dxd = dx.data_mut();
                let dad = da.data_mut();
                for i in 0..xd.len() {
                    let s = slope_of(i);
                    if xd[i] >= F::ZERO {
                        dxd[i] = gd[i];
                    } else {
                        dxd[i] = gd[i] * ad[s];
                        dad[s] += gd[i] * xd[i];
                    }
                }
            }
            vec![Some(dx), Some(da)]
        }),
    )
}

fn channel_layout(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 | 1 => (1, shape.iter().product::<usize>().max(1)),
        _ => (shape[1], shape[2..].iter().product::<usize>().max(1)),
    }
}

/// Running statistics owned by a batch-norm layer, outside the tape.
#[derive(Clone, Debug)]
pub struct BnStats<F: Real> {
    pub mean: Tensor<F>,
    pub var: Tensor<F>,
}

impl<F: Real> BnStats<F> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], F::ONE),
        }
    }
}

/// Per-channel batch normalization over an N×C×... activation with a learned
/// affine (`gamma`, `beta`).
///
/// Training mode uses in-batch statistics (biased variance) and folds them
/// into the running stats with the given momentum (unbiased variance, as is
/// conventional). Inference mode reads the frozen running stats and is a pure
/// per-channel affine map.
pub fn batch_norm<F: Real>(
    tape: &Tape<F>,
    x: Value,
    gamma: Value,
    beta: Value,
    stats: &mut BnStats<F>,
    training: bool,
    momentum: F,
    eps: F,
) -> Result<Value, NnError> {
    let xv = tape.value(x);
    let shape = xv.shape().to_vec();
    if shape.len() < 2 {
        return Err(NnError::shape(
            "batch_norm",
            format!("expected rank >= 2 activation, got {:?}", shape),
        ));
    }
    let batch = shape[0];
    let channels = shape[1];
    let spatial: usize = shape[2..].iter().product();
    let count = batch * spatial;
    if training && batch < 2 {
        return Err(NnError::BatchTooSmall(batch));
    }
    let gv = tape.value(gamma);
    let bv = tape.value(beta);
    if gv.shape() != [channels] || bv.shape() != [channels] {
        return Err(NnError::shape(
            "batch_norm",
            format!("gamma {:?} / beta {:?} vs {} channels", gv.shape(), bv.shape(), channels),
        ));
    }

    let (mean, var) = if training {
        let mut mean = vec![F::ZERO; channels];
        let mut var = vec![F::ZERO; channels];
        let xd = xv.data();
        for c in 0..channels {
            let mut acc = F::ZERO;
            for n in 0..batch {
                let base = (n * channels + c) * spatial;
                for s in 0..spatial {
                    acc += xd[base + s];
                }
            }
            mean[c] = acc / F::from_f64(count as f64);
            let mut vacc = F::ZERO;
            for n in 0..batch {
                let base = (n * channels + c) * spatial;
                for s in 0..spatial {
                    let d = xd[base + s] - mean[c];
                    vacc += d * d;
                }
            }
            var[c] = vacc / F::from_f64(count as f64);
        }
        // Fold into running stats; unbiased correction for the running variance.
        let unbias = if count > 1 {
            F::from_f64(count as f64 / (count as f64 - 1.0))
        } else {
            F::ONE
        };
        for c in 0..channels {
            let rm = stats.mean.data_mut();
            rm[c] = (F::ONE - momentum) * rm[c] + momentum * mean[c];
            let rv = stats.var.data_mut();
            rv[c] = (F::ONE - momentum) * rv[c] + momentum * var[c] * unbias;
        }
        (mean, var)
    } else {
        (stats.mean.data().to_vec(), stats.var.data().to_vec())
    };

    let invstd: Vec<F> = var.iter().map(|&v| F::ONE / (v + eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(&shape);
    let mut out = Tensor::zeros(&shape);
    {
        let xd = xv.data();
        let xh = xhat.data_mut();
        let od = out.data_mut();
        let gd = gv.data();
        let bd = bv.data();
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * spatial;
                for s in 0..spatial {
                    let h = (xd[base + s] - mean[c]) * invstd[c];
                    xh[base + s] = h;
                    od[base + s] = gd[c] * h + bd[c];
                }
            }
        }
    }

    let xhat_saved = xhat;
    Ok(tape.push_op(
        out,
        vec![x, gamma, beta],
        Box::new(move |g, _| {
            let gd = g.data();
            let xh = xhat_saved.data();
            let gamma_d = gv.data();

            let mut dgamma = Tensor::zeros(&[channels]);
            let mut dbeta = Tensor::zeros(&[channels]);
            {
                let dg = dgamma.data_mut();
                let db = dbeta.data_mut();
                for n in 0..batch {
                    for c in 0..channels {
                        let base = (n * channels + c) * spatial;
                        for s in 0..spatial {
                            dg[c] += gd[base + s] * xh[base + s];
                            db[c] += gd[base + s];
                        }
                    }
                }
            }

            let mut dx = Tensor::zeros(&[batch, channels, spatial]);
            {
                let dxd = dx.data_mut();
                let m = F::from_f64(count as f64);
                if training {
                    // dL/dx = gamma*invstd/m * (m*g - sum(g) - xhat*sum(g*xhat))
                    let dg = dgamma.data();
                    let db = dbeta.data();
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * spatial;
                            for s in 0..spatial {
                                let t = m * gd[base + s] - db[c] - xh[base + s] * dg[c];
                                dxd[base + s] = gamma_d[c] * invstd[c] / m * t;
                            }
                        }
                    }
                } else {
                    for n in 0..batch {
                        for c in 0..channels {
                            let base = (n * channels + c) * spatial;
                            for s in 0..spatial {
                                dxd[base + s] = gd[base + s] * gamma_d[c] * invstd[c];
                            }
                        }
                    }
                }
            }
            let dx = dx.reshaped(shape.clone());
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    ))
}

/// Row-normalized propagation matrix with self-loops: D̃⁻¹(A + I).
pub fn normalized_adjacency<F: Real>(adj: &Tensor<F>) -> Tensor<F> {
    let n = adj.shape()[0];
    assert_eq!(adj.shape(), &[n, n], "adjacency must be square");
    let mut out = Tensor::zeros(&[n, n]);
    let ad = adj.data();
    let od = out.data_mut();
    for i in 0..n {
        let mut degree = F::ONE; // self-loop
        for j in 0..n {
            if i != j && ad[i * n + j] != F::ZERO {
                degree += F::ONE;
            }
        }
        let inv = F::ONE / degree;
        for j in 0..n {
            let a = if i == j {
                F::ONE
            } else if ad[i * n + j] != F::ZERO {
                F::ONE
            } else {
                F::ZERO
            };
            od[i * n + j] = a * inv;
        }
    }
    out
}

/// Graph convolution Z' = tanh(D̃⁻¹·Ã·Z·W), with Ã = adj + I.
///
/// `norm_adj` is the precomputed [`normalized_adjacency`] pushed as a
/// constant; `z` is N×F node features and `w` an F×F' weight matrix.
pub fn graph_conv<F: Real>(
    tape: &Tape<F>,
    norm_adj: Value,
    z: Value,
    w: Value,
) -> Result<Value, NnError> {
    let agg = ops::matmul(tape, norm_adj, z)?;
    let lin = ops::matmul(tape, agg, w)?;
    Ok(ops::tanh(tape, lin))
}

/// SortPooling: order the rows of an N×F matrix by the last feature column
/// (descending), break ties by the next column leftward and finally by
/// original row position, then keep the first `k` rows, zero-padding when
/// N < k. Gradients flow only to the selected rows.
pub fn sort_pool<F: Real>(tape: &Tape<F>, z: Value, k: usize) -> Value {
    assert!(k >= 1, "sort_pool needs k >= 1");
    let zv = tape.value(z);
    assert_eq!(zv.shape().len(), 2, "sort_pool expects N×F input");
    let n = zv.shape()[0];
    let f = zv.shape()[1];

    let mut order: Vec<usize> = (0..n).collect();
    {
        let zd = zv.data();
        order.sort_by(|&a, &b| {
            for col in (0..f).rev() {
                let va = zd[a * f + col];
                let vb = zd[b * f + col];
                match vb.partial_cmp(&va) {
                    Some(std::cmp::Ordering::Equal) | None => continue,
                    Some(other) => return other,
                }
            }
            a.cmp(&b)
        });
    }
    let selected: Vec<usize> = order.into_iter().take(k).collect();

    let mut out = Tensor::zeros(&[k, f]);
    {
        let od = out.data_mut();
        let zd = zv.data();
        for (row, &src) in selected.iter().enumerate() {
            od[row * f..(row + 1) * f].copy_from_slice(&zd[src * f..(src + 1) * f]);
        }
    }
    tape.push_op(
        out,
        vec![z],
        Box::new(move |g, _| {
            let mut dz = Tensor::zeros(&[n, f]);
            let gd = g.data();
            let dzd = dz.data_mut();
            for (row, &src) in selected.iter().enumerate() {
                for c in 0..f {
                    dzd[src * f + c] += gd[row * f + c];
                }
            }
            vec![Some(dz)]
        }),
    )
}

/// Mean over the spatial axes of an N×C×H×W activation, producing N×C.
pub fn global_avg_pool2d<F: Real>(tape: &Tape<F>, x: Value) -> Result<Value, NnError> {
    let xv = tape.value(x);
    let (&[n, c, h, w],) = (xv.shape(),) else {
        return Err(NnError::shape(
            "global_avg_pool2d",
            format!("expected N×C×H×W, got {:?}", xv.shape()),
        ));
    };
    let area = h * w;
    let inv = F::ONE / F::from_f64(area as f64);
    let mut out = Tensor::zeros(&[n, c]);
    {
        let xd = xv.data();
        let od = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * area;
                let mut acc = F::ZERO;
                for s in 0..area {
                    acc += xd[base + s];
                }
                od[b * c + ch] = acc * inv;
            }
        }
    }
    Ok(tape.push_op(
        out,
        vec![x],
        Box::new(move |g, _| {
            let mut dx = Tensor::zeros(&[n, c, h, w]);
            let gd = g.data();
            let dxd = dx.data_mut();
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * area;
                    let gval = gd[b * c + ch] * inv;
                    for s in 0..area {
                        dxd[base + s] = gval;
                    }
                }
            }
            vec![Some(dx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prelu_branches() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_vec(vec![5.0, -2.0]));
        let a = tape.param(Tensor::from_vec(vec![0.25]));
        let y = prelu(&tape, x, a);
        assert_eq!(tape.value(y).data(), &[5.0, -0.5]);
    }

    #[test]
    fn prelu_slope_gradient() {
        // d/da of prelu(-2, a) = -2, scaled by upstream gradient.
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(vec![-2.0]));
        let a = tape.param(Tensor::from_vec(vec![0.25]));
        let y = prelu(&tape, x, a);
        let s = ops::scale(&tape, y, 3.0);
        let s = ops::sum_all(&tape, s);
        tape.backward(s);
        assert_eq!(tape.grad(a).unwrap().data(), &[-6.0]);
    }

    #[test]
    fn batch_norm_training_statistics() {
        let tape = Tape::<f64>::new();
        // 4 samples, 2 channels, scalar spatial extent
        let data: Vec<f64> = vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let x = tape.param(Tensor::new(vec![4, 2, 1], data));
        let gamma = tape.param(Tensor::from_vec(vec![1.0, 1.0]));
        let beta = tape.param(Tensor::from_vec(vec![0.0, 0.0]));
        let mut stats = BnStats::new(2);
        let y = batch_norm(&tape, x, gamma, beta, &mut stats, true, 0.1, 1e-8).unwrap();
        let yv = tape.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..4).map(|n| yv.data()[n * 2 + c]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / 4.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-4, "channel {} mean {}", c, mean);
            assert!((var - 1.0).abs() < 1e-4, "channel {} var {}", c, var);
        }
    }

    #[test]
    fn batch_norm_identity_on_standardized_input() {
        // A batch whose per-channel mean is 0 and (biased) variance is 1 passes
        // through almost unchanged when gamma=1, beta=0.
        let tape = Tape::<f64>::new();
        let vals = [-1.0, 1.0, -1.0, 1.0];
        let x = tape.param(Tensor::new(vec![4, 1, 1], vals.to_vec()));
        let gamma = tape.param(Tensor::from_vec(vec![1.0]));
        let beta = tape.param(Tensor::from_vec(vec![0.0]));
        let mut stats = BnStats::new(1);
        let y = batch_norm(&tape, x, gamma, beta, &mut stats, true, 0.1, 1e-12).unwrap();
        let yv = tape.value(y);
        for (a, b) in yv.data().iter().zip(vals.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_rejects_singleton_batch_in_training() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![1, 1, 4], vec![1.0; 4]));
        let gamma = tape.param(Tensor::from_vec(vec![1.0]));
        let beta = tape.param(Tensor::from_vec(vec![0.0]));
        let mut stats = BnStats::new(1);
        assert!(matches!(
            batch_norm(&tape, x, gamma, beta, &mut stats, true, 0.1, 1e-8),
            Err(NnError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn batch_norm_inference_is_deterministic() {
        let mut stats = BnStats::new(1);
        stats.mean = Tensor::from_vec(vec![0.5]);
        stats.var = Tensor::from_vec(vec![4.0]);
        let run = |stats: &mut BnStats<f64>| {
            let tape = Tape::<f64>::new();
            let x = tape.param(Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]));
            let gamma = tape.param(Tensor::from_vec(vec![2.0]));
            let beta = tape.param(Tensor::from_vec(vec![-1.0]));
            let y = batch_norm(&tape, x, gamma, beta, stats, false, 0.1, 0.0).unwrap();
            tape.value(y).data().to_vec()
        };
        let a = run(&mut stats);
        let b = run(&mut stats);
        assert_eq!(a, b);
        // (1 - 0.5)/2 * 2 - 1 = -0.5
        assert!((a[0] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalized_adjacency_path_middle_row() {
        // Path 0 - 1 - 2 (undirected): middle node row is [1/3, 1/3, 1/3].
        let mut adj = Tensor::<f64>::zeros(&[3, 3]);
        for (i, j) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            adj.data_mut()[i * 3 + j] = 1.0;
        }
        let norm = normalized_adjacency(&adj);
        let row: Vec<f64> = norm.data()[3..6].to_vec();
        assert_eq!(row, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn graph_conv_isolated_node_is_tanh_of_linear() {
        let tape = Tape::<f64>::new();
        let adj = tape.constant(normalized_adjacency(&Tensor::zeros(&[1, 1])));
        let z = tape.param(Tensor::new(vec![1, 2], vec![0.3, -0.8]));
        let w = tape.param(Tensor::new(vec![2, 2], vec![1.0, 0.5, -0.25, 2.0]));
        let y = graph_conv(&tape, adj, z, w).unwrap();
        let expect = [
            (0.3f64 * 1.0 + (-0.8) * (-0.25)).tanh(),
            (0.3f64 * 0.5 + (-0.8) * 2.0).tanh(),
        ];
        let yv = tape.value(y);
        for (a, b) in yv.data().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_conv_zero_weights() {
        let tape = Tape::<f64>::new();
        let adj = tape.constant(normalized_adjacency(&Tensor::zeros(&[2, 2])));
        let z = tape.param(Tensor::new(vec![2, 3], vec![1.0; 6]));
        let w = tape.param(Tensor::zeros(&[3, 4]));
        let y = graph_conv(&tape, adj, z, w).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sort_pool_selects_and_pads() {
        let tape = Tape::<f64>::new();
        // Two nodes, sort key (last column) 0.1 and 0.9: second node first.
        let z = tape.param(Tensor::new(vec![2, 2], vec![1.0, 0.1, 2.0, 0.9]));
        let top1 = sort_pool(&tape, z, 1);
        assert_eq!(tape.value(top1).data(), &[2.0, 0.9]);
        let padded = sort_pool(&tape, z, 4);
        assert_eq!(tape.value(padded).shape(), &[4, 2]);
        assert_eq!(
            tape.value(padded).data(),
            &[2.0, 0.9, 1.0, 0.1, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn sort_pool_identity_when_sorted() {
        let tape = Tape::<f64>::new();
        let z = tape.param(Tensor::new(vec![3, 2], vec![5.0, 3.0, 4.0, 2.0, 3.0, 1.0]));
        let y = sort_pool(&tape, z, 3);
        assert_eq!(tape.value(y).data(), tape.value(z).data());
    }

    #[test]
    fn global_pool_mean() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let y = global_avg_pool2d(&tape, x).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
    }
}
