//! Finite-difference verification of reverse-mode gradients.

use crate::tape::{Tape, Value};
use crate::tensor::Tensor;

/// Compare reverse-mode gradients of a scalar-valued function against central
/// finite differences at the given point; returns the maximum relative error
/// over all checked coordinates.
///
/// `f` receives a fresh tape and one tracked `Value` per input tensor and must
/// return a scalar. `coords_per_input` limits how many coordinates of each
/// input are probed (`None` probes all); probed coordinates are evenly spaced
/// so large tensors stay affordable.
pub fn grad_check<Builder>(
    inputs: &[Tensor<f64>],
    step: f64,
    coords_per_input: Option<usize>,
    f: Builder,
) -> f64
where
    Builder: Fn(&Tape<f64>, &[Value]) -> Value,
{
    // Analytic gradients.
    let tape = Tape::new();
    let vals: Vec<Value> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vals);
    assert_eq!(tape.value(out).len(), 1, "grad_check target must be scalar");
    tape.backward(out);
    let analytic: Vec<Tensor<f64>> = vals
        .iter()
        .zip(inputs.iter())
        .map(|(&v, t)| tape.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |points: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vals: Vec<Value> = points.iter().map(|t| tape.constant(t.clone())).collect();
        tape.value(f(&tape, &vals)).item()
    };

    let mut max_rel = 0.0f64;
    for (idx, input) in inputs.iter().enumerate() {
        let n = input.len();
        let probes: Vec<usize> = match coords_per_input {
            Some(limit) if limit < n => {
                let stride = n as f64 / limit as f64;
                (0..limit).map(|i| (i as f64 * stride) as usize).collect()
            }
            _ => (0..n).collect(),
        };
        for coord in probes {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[coord] += step;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[coord] -= step;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let a = analytic[idx].data()[coord];
            let denom = a.abs().max(numeric.abs()).max(1.0);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ops, Tensor};

    #[test]
    fn quadratic_gradient_is_exact() {
        let x = Tensor::from_vec(vec![0.5, -1.5, 2.0]);
        let err = grad_check(&[x], 1e-5, None, |tape, vals| {
            let y = ops::mul(tape, vals[0], vals[0]);
            ops::sum_all(tape, y)
        });
        assert!(err < 1e-9, "rel err {}", err);
    }

    #[test]
    fn tanh_chain() {
        let x = Tensor::from_vec(vec![0.3, -0.9, 1.7, 0.01]);
        let err = grad_check(&[x], 1e-5, None, |tape, vals| {
            let y = ops::tanh(tape, vals[0]);
            let y = ops::mul(tape, y, y);
            ops::mean_all(tape, y)
        });
        assert!(err < 1e-8, "rel err {}", err);
    }
}
