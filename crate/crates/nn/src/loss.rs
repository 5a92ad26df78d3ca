//! Binary cross-entropy on logits.

use crate::tape::{Tape, Value};
use crate::tensor::{Real, Tensor};

/// Numerically stable BCE-with-logits, mean-reduced over the batch:
/// `max(z,0) - z*y + ln(1 + exp(-|z|))` per element.
///
/// `labels` must have the same element count as `logits` and entries in {0,1}.
pub fn bce_with_logits<F: Real>(tape: &Tape<F>, logits: Value, labels: &Tensor<F>) -> Value {
    let zv = tape.value(logits);
    assert_eq!(
        zv.len(),
        labels.len(),
        "bce_with_logits: {} logits vs {} labels",
        zv.len(),
        labels.len()
    );
    let n = zv.len();
    let inv_n = F::ONE / F::from_f64(n as f64);
    let mut acc = F::ZERO;
    for (&z, &y) in zv.data().iter().zip(labels.data().iter()) {
        acc += z.max(F::ZERO) - z * y + (F::ONE + (-z.abs()).exp()).ln();
    }
    let out = Tensor::scalar(acc * inv_n);
    let labels = labels.clone();
    let shape = zv.shape().to_vec();
    tape.push_op(
        out,
        vec![logits],
        Box::new(move |g, _| {
            // dL/dz = (sigmoid(z) - y) / n
            let gscale = g.item() * inv_n;
            let mut dz = Tensor::zeros(&shape);
            {
                let dzd = dz.data_mut();
                for (i, (&z, &y)) in zv.data().iter().zip(labels.data().iter()).enumerate() {
                    dzd[i] = (sigmoid(z) - y) * gscale;
                }
            }
            vec![Some(dz)]
        }),
    )
}

/// Logistic sigmoid, stable for large |z|.
pub fn sigmoid<F: Real>(z: F) -> F {
    if z >= F::ZERO {
        F::ONE / (F::ONE + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::ONE + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logit_positive_label_is_ln2() {
        let tape = Tape::<f64>::new();
        let z = tape.param(Tensor::from_vec(vec![0.0]));
        let loss = bce_with_logits(&tape, z, &Tensor::from_vec(vec![1.0]));
        assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn unit_logit_negative_label() {
        let tape = Tape::<f64>::new();
        let z = tape.param(Tensor::from_vec(vec![1.0]));
        let loss = bce_with_logits(&tape, z, &Tensor::from_vec(vec![0.0]));
        let expect = (1.0 + std::f64::consts::E).ln(); // 1.3132616875182228
        assert!((tape.value(loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_for_confident_correct_logits() {
        let mut last = f64::INFINITY;
        for z in [1.0, 5.0, 20.0, 50.0] {
            let tape = Tape::<f64>::new();
            let zv = tape.param(Tensor::from_vec(vec![z]));
            let loss = tape.value(bce_with_logits(&tape, zv, &Tensor::from_vec(vec![1.0]))).item();
            assert!(loss < last, "loss not decreasing at z={}", z);
            last = loss;
        }
        assert!(last < 1e-20);
    }

    #[test]
    fn gradient_is_sigmoid_minus_label_over_n() {
        let tape = Tape::<f64>::new();
        let z = tape.param(Tensor::from_vec(vec![0.3, -1.2]));
        let labels = Tensor::from_vec(vec![1.0, 0.0]);
        let loss = bce_with_logits(&tape, z, &labels);
        tape.backward(loss);
        let g = tape.grad(z).unwrap();
        assert!((g.data()[0] - (sigmoid(0.3) - 1.0) / 2.0).abs() < 1e-12);
        assert!((g.data()[1] - sigmoid(-1.2) / 2.0).abs() < 1e-12);
    }
}
