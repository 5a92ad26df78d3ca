//! Elementwise and structural tape operations.

use crate::error::NnError;
use crate::tape::{Tape, Value};
use crate::tensor::{Real, Tensor};

/// Elementwise sum of two same-shape tensors.
pub fn add<F: Real>(tape: &Tape<F>, a: Value, b: Value) -> Value {
    let av = tape.value(a);
    let bv = tape.value(b);
    assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
    let out = av.zip(&bv, |x, y| x + y);
    tape.push_op(
        out,
        vec![a, b],
        Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
    )
}

/// Elementwise product of two same-shape tensors.
pub fn mul<F: Real>(tape: &Tape<F>, a: Value, b: Value) -> Value {
    let av = tape.value(a);
    let bv = tape.value(b);
    assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
    let out = av.zip(&bv, |x, y| x * y);
    tape.push_op(
        out,
        vec![a, b],
        Box::new(move |g, _| {
            vec![
                Some(g.zip(&bv, |gi, bi| gi * bi)),
                Some(g.zip(&av, |gi, ai| gi * ai)),
            ]
        }),
    )
}

/// Multiply by a compile-time constant.
pub fn scale<F: Real>(tape: &Tape<F>, a: Value, factor: F) -> Value {
    let out = tape.value(a).scale(factor);
    tape.push_op(
        out,
        vec![a],
        Box::new(move |g, _| vec![Some(g.scale(factor))]),
    )
}

pub fn tanh<F: Real>(tape: &Tape<F>, a: Value) -> Value {
    let out = tape.value(a).map(Real::tanh);
    let saved = out.clone();
    tape.push_op(
        out,
        vec![a],
        Box::new(move |g, _| vec![Some(g.zip(&saved, |gi, yi| gi * (F::ONE - yi * yi)))]),
    )
}

/// Sum over all entries, producing a scalar.
pub fn sum_all<F: Real>(tape: &Tape<F>, a: Value) -> Value {
    let av = tape.value(a);
    let shape = av.shape().to_vec();
    let out = Tensor::scalar(av.sum());
    tape.push_op(
        out,
        vec![a],
        Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item()))]),
    )
}

/// Mean over all entries, producing a scalar.
pub fn mean_all<F: Real>(tape: &Tape<F>, a: Value) -> Value {
    let av = tape.value(a);
    let n = av.len();
    let shape = av.shape().to_vec();
    let inv = F::ONE / F::from_f64(n as f64);
    let out = Tensor::scalar(av.sum() * inv);
    tape.push_op(
        out,
        vec![a],
        Box::new(move |g, _| vec![Some(Tensor::full(&shape, g.item() * inv))]),
    )
}

/// Reinterpret the value under a new shape with the same element count.
pub fn reshape<F: Real>(tape: &Tape<F>, a: Value, shape: Vec<usize>) -> Value {
    let av = tape.value(a);
    let old_shape = av.shape().to_vec();
    let out = av.reshaped(shape);
    tape.push_op(
        out,
        vec![a],
        Box::new(move |g, _| vec![Some(g.clone().reshaped(old_shape.clone()))]),
    )
}

/// Matrix product of `a` (m×k) and `b` (k×n).
pub fn matmul<F: Real>(tape: &Tape<F>, a: Value, b: Value) -> Result<Value, NnError> {
    let av = tape.value(a);
    let bv = tape.value(b);
    let (&[m, k], &[k2, n]) = (av.shape(), bv.shape()) else {
        return Err(NnError::shape(
            "matmul",
            format!("expected rank-2 operands, got {:?} x {:?}", av.shape(), bv.shape()),
        ));
    };
    if k != k2 {
        return Err(NnError::shape(
            "matmul",
            format!("inner dimensions differ: {:?} x {:?}", av.shape(), bv.shape()),
        ));
    }
    let out = matmul_data(&av, &bv, m, k, n);
    Ok(tape.push_op(
        out,
        vec![a, b],
        Box::new(move |g, needs| {
            let da = needs[0].then(|| {
                // dA = G · Bᵀ
                let mut da = Tensor::zeros(&[m, k]);
                let gd = g.data();
                let bd = bv.data();
                let dad = da.data_mut();
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        let brow = &bd[..]; // b is k×n
                        for l in 0..k {
                            dad[i * k + l] += gij * brow[l * n + j];
                        }
                    }
                }
                da
            });
            let db = needs[1].then(|| {
                // dB = Aᵀ · G
                let mut db = Tensor::zeros(&[k, n]);
                let gd = g.data();
                let ad = av.data();
                let dbd = db.data_mut();
                for i in 0..m {
                    for l in 0..k {
                        let ail = ad[i * k + l];
                        let grow = &gd[i * n..(i + 1) * n];
                        let drow = &mut dbd[l * n..(l + 1) * n];
                        for j in 0..n {
                            drow[j] += ail * grow[j];
                        }
                    }
                }
                db
            });
            vec![da, db]
        }),
    ))
}

fn matmul_data<F: Real>(a: &Tensor<F>, b: &Tensor<F>, m: usize, k: usize, n: usize) -> Tensor<F> {
    let mut out = Tensor::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for l in 0..k {
            let ail = ad[i * k + l];
            let brow = &bd[l * n..(l + 1) * n];
            for j in 0..n {
                orow[j] += ail * brow[j];
            }
        }
    }
    out
}

/// Row-broadcast bias: `x` (N×F) plus `b` (F) added to every row.
pub fn add_bias_row<F: Real>(tape: &Tape<F>, x: Value, b: Value) -> Result<Value, NnError> {
    let xv = tape.value(x);
    let bv = tape.value(b);
    let (&[rows, cols], &[blen]) = (xv.shape(), bv.shape()) else {
        return Err(NnError::shape(
            "add_bias_row",
            format!("expected N×F and F, got {:?} and {:?}", xv.shape(), bv.shape()),
        ));
    };
    if cols != blen {
        return Err(NnError::shape(
            "add_bias_row",
            format!("bias width {} vs feature width {}", blen, cols),
        ));
    }
    let mut out = xv.clone();
    {
        let od = out.data_mut();
        let bd = bv.data();
        for r in 0..rows {
            for c in 0..cols {
                od[r * cols + c] += bd[c];
            }
        }
    }
    Ok(tape.push_op(
        out,
        vec![x, b],
        Box::new(move |g, _| {
            let gd = g.data();
            let mut db = Tensor::zeros(&[cols]);
            let dbd = db.data_mut();
            for r in 0..rows {
                for c in 0..cols {
                    dbd[c] += gd[r * cols + c];
                }
            }
            vec![Some(g.clone()), Some(db)]
        }),
    ))
}

/// Per-channel bias for rank-3/rank-4 activations shaped N×C×...
pub fn add_bias_chan<F: Real>(tape: &Tape<F>, x: Value, b: Value) -> Result<Value, NnError> {
    let xv = tape.value(x);
    let bv = tape.value(b);
    let shape = xv.shape().to_vec();
    if shape.len() < 2 {
        return Err(NnError::shape(
            "add_bias_chan",
            format!("expected rank >= 2 activation, got {:?}", shape),
        ));
    }
    let channels = shape[1];
    if bv.shape() != [channels] {
        return Err(NnError::shape(
            "add_bias_chan",
            format!("bias {:?} vs channel count {}", bv.shape(), channels),
        ));
    }
    let batch = shape[0];
    let spatial: usize = shape[2..].iter().product();
    let mut out = xv.clone();
    {
        let od = out.data_mut();
        let bd = bv.data();
        for n in 0..batch {
            for c in 0..channels {
                let base = (n * channels + c) * spatial;
                for s in 0..spatial {
                    od[base + s] += bd[c];
                }
            }
        }
    }
    Ok(tape.push_op(
        out,
        vec![x, b],
        Box::new(move |g, _| {
            let gd = g.data();
            let mut db = Tensor::zeros(&[channels]);
            let dbd = db.data_mut();
            for n in 0..batch {
                for c in 0..channels {
                    let base = (n * channels + c) * spatial;
                    for s in 0..spatial {
                        dbd[c] += gd[base + s];
                    }
                }
            }
            vec![Some(g.clone()), Some(db)]
        }),
    ))
}

/// Concatenate rank-2 tensors along the column axis.
pub fn concat_cols<F: Real>(tape: &Tape<F>, parts: &[Value]) -> Result<Value, NnError> {
    assert!(!parts.is_empty());
    let tensors: Vec<Tensor<F>> = parts.iter().map(|&v| tape.value(v)).collect();
    let rows = tensors[0].shape()[0];
    for t in &tensors {
        if t.shape().len() != 2 || t.shape()[0] != rows {
            return Err(NnError::shape(
                "concat_cols",
                format!("inconsistent row counts: {:?}", tensors.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>()),
            ));
        }
    }
    let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[1]).collect();
    let total: usize = widths.iter().sum();
    let mut out = Tensor::zeros(&[rows, total]);
    {
        let od = out.data_mut();
        let mut offset = 0;
        for t in &tensors {
            let w = t.shape()[1];
            let td = t.data();
            for r in 0..rows {
                od[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&td[r * w..(r + 1) * w]);
            }
            offset += w;
        }
    }
    Ok(tape.push_op(
        out,
        parts.to_vec(),
        Box::new(move |g, _| {
            let gd = g.data();
            let mut grads = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for &w in &widths {
                let mut part = Tensor::zeros(&[rows, w]);
                {
                    let pd = part.data_mut();
                    for r in 0..rows {
                        pd[r * w..(r + 1) * w]
                            .copy_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                }
                grads.push(Some(part));
                offset += w;
            }
            grads
        }),
    ))
}

/// Stack rank-1 tensors of equal length into an N×F matrix.
pub fn stack_rows<F: Real>(tape: &Tape<F>, rows: &[Value]) -> Result<Value, NnError> {
    assert!(!rows.is_empty());
    let tensors: Vec<Tensor<F>> = rows.iter().map(|&v| tape.value(v)).collect();
    let width = tensors[0].len();
    for t in &tensors {
        if t.shape().len() != 1 || t.len() != width {
            return Err(NnError::shape(
                "stack_rows",
                format!("expected rank-1 length {}, got {:?}", width, t.shape()),
            ));
        }
    }
    let n = tensors.len();
    let mut data = Vec::with_capacity(n * width);
    for t in &tensors {
        data.extend_from_slice(t.data());
    }
    let out = Tensor::new(vec![n, width], data);
    Ok(tape.push_op(
        out,
        rows.to_vec(),
        Box::new(move |g, _| {
            let gd = g.data();
            (0..n)
                .map(|i| {
                    Some(Tensor::new(
                        vec![width],
                        gd[i * width..(i + 1) * width].to_vec(),
                    ))
                })
                .collect()
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_known_product() {
        let tape = Tape::<f64>::new();
        let a = tape.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.param(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]));
        let c = matmul(&tape, a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let tape = Tape::<f64>::new();
        let a = tape.param(Tensor::zeros(&[2, 3]));
        let b = tape.param(Tensor::zeros(&[2, 3]));
        assert!(matmul(&tape, a, b).is_err());
    }

    #[test]
    fn concat_and_split_gradients() {
        let tape = Tape::<f64>::new();
        let a = tape.param(Tensor::new(vec![1, 2], vec![1.0, 2.0]));
        let b = tape.param(Tensor::new(vec![1, 3], vec![3.0, 4.0, 5.0]));
        let c = concat_cols(&tape, &[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = sum_all(&tape, c);
        tape.backward(s);
        assert_eq!(tape.grad(a).unwrap().shape(), &[1, 2]);
        assert_eq!(tape.grad(b).unwrap().shape(), &[1, 3]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let tape = Tape::<f64>::new();
        let a = tape.param(Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let m = mean_all(&tape, a);
        tape.backward(m);
        assert_eq!(tape.grad(a).unwrap().data(), &[0.25; 4]);
    }
}
