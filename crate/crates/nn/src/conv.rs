//! 2-D and 1-D convolution (cross-correlation) with reverse-mode gradients.
//!
//! The primitive is cross-correlation: kernels are not flipped. Kernels are
//! learned, so the sign convention only matters for golden values, which all
//! assume this layout.
//!
//! Inner loops are branch-free: for each kernel offset the valid output range
//! is computed once, so padding never costs a per-element check and the
//! stride-1 case reduces to contiguous slice arithmetic.

use crate::error::NnError;
use crate::tape::{Tape, Value};
use crate::tensor::{Real, Tensor};

/// Output length of one convolved axis.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Valid output range [lo, hi) for kernel offset `d`: every `o` in the range
/// maps to an in-bounds input index `o*stride + d - padding`.
fn valid_range(input: usize, out: usize, stride: usize, padding: usize, d: usize) -> (usize, usize) {
    let shift = d as isize - padding as isize;
    let lo = if shift < 0 {
        ((-shift) as usize).div_ceil(stride)
    } else {
        0
    };
    // o*stride + shift <= input-1
    let max_in = input as isize - 1 - shift;
    if max_in < 0 {
        return (0, 0);
    }
    let hi = (max_in as usize / stride + 1).min(out);
    (lo.min(hi), hi)
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

/// Batched 2-D convolution: `x` is N×C×H×W, `kernels` are O×C×kh×kw,
/// zero padding on both spatial axes. Output is N×O×H'×W'.
pub fn conv2d<F: Real>(
    tape: &Tape<F>,
    x: Value,
    kernels: Value,
    stride: usize,
    padding: usize,
) -> Result<Value, NnError> {
    assert!(stride >= 1, "conv2d stride must be >= 1");
    let xv = tape.value(x);
    let kv = tape.value(kernels);
    let (&[n, c, h, w], &[co, ci, kh, kw]) = (xv.shape(), kv.shape()) else {
        return Err(NnError::shape(
            "conv2d",
            format!("expected N×C×H×W and O×C×kh×kw, got {:?} and {:?}", xv.shape(), kv.shape()),
        ));
    };
    if c != ci {
        return Err(NnError::shape(
            "conv2d",
            format!("input has {} channels, kernels expect {}", c, ci),
        ));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(NnError::shape(
            "conv2d",
            format!("kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * padding, w + 2 * padding),
        ));
    }
    let geom = Geometry {
        n,
        c,
        h,
        w,
        co,
        kh,
        kw,
        stride,
        padding,
        oh: conv_out_len(h, kh, stride, padding),
        ow: conv_out_len(w, kw, stride, padding),
    };
    let out = forward(&xv, &kv, &geom);
    let geom2 = Geometry { ..geom };
    Ok(tape.push_op(
        out,
        vec![x, kernels],
        Box::new(move |g, needs| {
            let dx = needs[0].then(|| input_grad(g, &kv, &geom2));
            let dk = needs[1].then(|| kernel_grad(g, &xv, &geom2));
            vec![dx, dk]
        }),
    ))
}

/// Scatter/gather map between padded patches and the input plane.
/// `cols` is (c*kh*kw) x (oh*ow), row-major.
fn im2col<F: Real>(xd: &[F], cols: &mut [F], g: &Geometry) {
    let ohow = g.oh * g.ow;
    cols.iter_mut().for_each(|v| *v = F::ZERO);
    for ch in 0..g.c {
        let plane = &xd[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for dy in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(g.h, g.oh, g.stride, g.padding, dy);
            let shift_y = dy as isize - g.padding as isize;
            for dx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(g.w, g.ow, g.stride, g.padding, dx);
                if ox_lo >= ox_hi {
                    continue;
                }
                let shift_x = dx as isize - g.padding as isize;
                let row = ((ch * g.kh + dy) * g.kw + dx) * ohow;
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * g.stride as isize + shift_y) as usize;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut cols[row + oy * g.ow + ox_lo..row + oy * g.ow + ox_hi];
                    if g.stride == 1 {
                        let ix0 = (ox_lo as isize + shift_x) as usize;
                        dst.copy_from_slice(&src[ix0..ix0 + ox_hi - ox_lo]);
                    } else {
                        for (slot, v) in dst.iter_mut().enumerate() {
                            let ix = ((ox_lo + slot) as isize * g.stride as isize + shift_x) as usize;
                            *v = src[ix];
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: accumulate patch gradients back onto the plane.
fn col2im<F: Real>(cols: &[F], dxd: &mut [F], g: &Geometry) {
    let ohow = g.oh * g.ow;
    for ch in 0..g.c {
        let plane = &mut dxd[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for dy in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(g.h, g.oh, g.stride, g.padding, dy);
            let shift_y = dy as isize - g.padding as isize;
            for dx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(g.w, g.ow, g.stride, g.padding, dx);
                if ox_lo >= ox_hi {
                    continue;
                }
                let shift_x = dx as isize - g.padding as isize;
                let row = ((ch * g.kh + dy) * g.kw + dx) * ohow;
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * g.stride as isize + shift_y) as usize;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &cols[row + oy * g.ow + ox_lo..row + oy * g.ow + ox_hi];
                    if g.stride == 1 {
                        let ix0 = (ox_lo as isize + shift_x) as usize;
                        for (d, &s) in dst[ix0..ix0 + src.len()].iter_mut().zip(src) {
                            *d += s;
                        }
                    } else {
                        for (slot, &s) in src.iter().enumerate() {
                            let ix = ((ox_lo + slot) as isize * g.stride as isize + shift_x) as usize;
                            dst[ix] += s;
                        }
                    }
                }
            }
        }
    }
}

fn forward<F: Real>(x: &Tensor<F>, k: &Tensor<F>, g: &Geometry) -> Tensor<F> {
    let ohow = g.oh * g.ow;
    let patch = g.c * g.kh * g.kw;
    let mut out = Tensor::zeros(&[g.n, g.co, g.oh, g.ow]);
    let xd = x.data();
    let kd = k.data();
    let od = out.data_mut();
    if ohow >= patch {
        // Long spatial rows: accumulate kernel-scaled column rows.
        let mut cols = vec![F::ZERO; patch * ohow];
        for b in 0..g.n {
            im2col(&xd[b * g.c * g.h * g.w..], &mut cols, g);
            let obase = b * g.co * ohow;
            for o in 0..g.co {
                let orow = &mut od[obase + o * ohow..obase + (o + 1) * ohow];
                for r in 0..patch {
                    let kval = kd[o * patch + r];
                    if kval == F::ZERO {
                        continue;
                    }
                    let crow = &cols[r * ohow..(r + 1) * ohow];
                    for (ov, &cv) in orow.iter_mut().zip(crow) {
                        *ov += kval * cv;
                    }
                }
            }
        }
    } else {
        // Deep patches over few positions: dot kernel rows with patch rows.
        let mut cols_t = vec![F::ZERO; patch * ohow];
        for b in 0..g.n {
            im2col_transposed(&xd[b * g.c * g.h * g.w..], &mut cols_t, g);
            let obase = b * g.co * ohow;
            for o in 0..g.co {
                let krow = &kd[o * patch..(o + 1) * patch];
                for t in 0..ohow {
                    let crow = &cols_t[t * patch..(t + 1) * patch];
                    let mut acc = F::ZERO;
                    for (&kv, &cv) in krow.iter().zip(crow) {
                        acc += kv * cv;
                    }
                    od[obase + o * ohow + t] = acc;
                }
            }
        }
    }
    out
}

/// Patch-major layout: `cols_t` is (oh*ow) x (c*kh*kw).
fn im2col_transposed<F: Real>(xd: &[F], cols_t: &mut [F], g: &Geometry) {
    let patch = g.c * g.kh * g.kw;
    cols_t.iter_mut().for_each(|v| *v = F::ZERO);
    for ch in 0..g.c {
        let plane = &xd[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for dy in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(g.h, g.oh, g.stride, g.padding, dy);
            let shift_y = dy as isize - g.padding as isize;
            for dx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(g.w, g.ow, g.stride, g.padding, dx);
                if ox_lo >= ox_hi {
                    continue;
                }
                let shift_x = dx as isize - g.padding as isize;
                let r = (ch * g.kh + dy) * g.kw + dx;
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * g.stride as isize + shift_y) as usize;
                    for ox in ox_lo..ox_hi {
                        let ix = (ox as isize * g.stride as isize + shift_x) as usize;
                        cols_t[(oy * g.ow + ox) * patch + r] = plane[iy * g.w + ix];
                    }
                }
            }
        }
    }
}

fn input_grad<F: Real>(gout: &Tensor<F>, k: &Tensor<F>, g: &Geometry) -> Tensor<F> {
    let ohow = g.oh * g.ow;
    let patch = g.c * g.kh * g.kw;
    let mut dx = Tensor::zeros(&[g.n, g.c, g.h, g.w]);
    let gd = gout.data();
    let kd = k.data();
    let dxd = dx.data_mut();
    let mut dcols = vec![F::ZERO; patch * ohow];
    for b in 0..g.n {
        let gbase = b * g.co * ohow;
        if ohow >= patch {
            // dcols (patch x ohow) = K^T . G_b
            dcols.iter_mut().for_each(|v| *v = F::ZERO);
            for o in 0..g.co {
                let grow = &gd[gbase + o * ohow..gbase + (o + 1) * ohow];
                for r in 0..patch {
                    let kval = kd[o * patch + r];
                    if kval == F::ZERO {
                        continue;
                    }
                    let crow = &mut dcols[r * ohow..(r + 1) * ohow];
                    for (cv, &gv) in crow.iter_mut().zip(grow) {
                        *cv += kval * gv;
                    }
                }
            }
            col2im(&dcols, &mut dxd[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w], g);
        } else {
            // dcols_t (ohow x patch): per position, accumulate scaled kernel rows.
            dcols.iter_mut().for_each(|v| *v = F::ZERO);
            for o in 0..g.co {
                let krow = &kd[o * patch..(o + 1) * patch];
                let grow = &gd[gbase + o * ohow..gbase + (o + 1) * ohow];
                for (t, &gv) in grow.iter().enumerate() {
                    if gv == F::ZERO {
                        continue;
                    }
                    let drow = &mut dcols[t * patch..(t + 1) * patch];
                    for (dv, &kv) in drow.iter_mut().zip(krow) {
                        *dv += gv * kv;
                    }
                }
            }
            col2im_transposed(&dcols, &mut dxd[b * g.c * g.h * g.w..(b + 1) * g.c * g.h * g.w], g);
        }
    }
    dx
}

/// Transpose of [`im2col_transposed`]: accumulate patch-major gradients.
fn col2im_transposed<F: Real>(cols_t: &[F], dxd: &mut [F], g: &Geometry) {
    let patch = g.c * g.kh * g.kw;
    for ch in 0..g.c {
        let plane = &mut dxd[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for dy in 0..g.kh {
            let (oy_lo, oy_hi) = valid_range(g.h, g.oh, g.stride, g.padding, dy);
            let shift_y = dy as isize - g.padding as isize;
            for dx in 0..g.kw {
                let (ox_lo, ox_hi) = valid_range(g.w, g.ow, g.stride, g.padding, dx);
                if ox_lo >= ox_hi {
                    continue;
                }
                let shift_x = dx as isize - g.padding as isize;
                let r = (ch * g.kh + dy) * g.kw + dx;
                for oy in oy_lo..oy_hi {
                    let iy = (oy as isize * g.stride as isize + shift_y) as usize;
                    for ox in ox_lo..ox_hi {
                        let ix = (ox as isize * g.stride as isize + shift_x) as usize;
                        plane[iy * g.w + ix] += cols_t[(oy * g.ow + ox) * patch + r];
                    }
                }
            }
        }
    }
}

fn kernel_grad<F: Real>(gout: &Tensor<F>, x: &Tensor<F>, g: &Geometry) -> Tensor<F> {
    let ohow = g.oh * g.ow;
    let patch = g.c * g.kh * g.kw;
    let mut dk = Tensor::zeros(&[g.co, g.c, g.kh, g.kw]);
    let gd = gout.data();
    let xd = x.data();
    let dkd = dk.data_mut();
    let mut cols = vec![F::ZERO; patch * ohow];
    for b in 0..g.n {
        im2col(&xd[b * g.c * g.h * g.w..], &mut cols, g);
        // dK (co x patch) += G_b (co x ohow) . cols^T
        let gbase = b * g.co * ohow;
        for o in 0..g.co {
            let grow = &gd[gbase + o * ohow..gbase + (o + 1) * ohow];
            let krow = &mut dkd[o * patch..(o + 1) * patch];
            for (r, kslot) in krow.iter_mut().enumerate() {
                let crow = &cols[r * ohow..(r + 1) * ohow];
                let mut acc = F::ZERO;
                for (&gv, &cv) in grow.iter().zip(crow) {
                    acc += gv * cv;
                }
                *kslot += acc;
            }
        }
    }
    dk
}

/// Batched 1-D convolution: `x` is N×C×L, `kernels` are O×C×k, no padding.
pub fn conv1d<F: Real>(
    tape: &Tape<F>,
    x: Value,
    kernels: Value,
    stride: usize,
) -> Result<Value, NnError> {
    assert!(stride >= 1, "conv1d stride must be >= 1");
    let xv = tape.value(x);
    let kv = tape.value(kernels);
    let (&[n, c, l], &[co, ci, kl]) = (xv.shape(), kv.shape()) else {
        return Err(NnError::shape(
            "conv1d",
            format!("expected N×C×L and O×C×k, got {:?} and {:?}", xv.shape(), kv.shape()),
        ));
    };
    if c != ci || kl > l {
        return Err(NnError::shape(
            "conv1d",
            format!("input {:?} incompatible with kernels {:?}", xv.shape(), kv.shape()),
        ));
    }
    let ol = conv_out_len(l, kl, stride, 0);
    let mut out = Tensor::zeros(&[n, co, ol]);
    {
        let xd = xv.data();
        let kd = kv.data();
        let od = out.data_mut();
        for b in 0..n {
            for o in 0..co {
                let obase = (b * co + o) * ol;
                for ch in 0..c {
                    let xbase = (b * c + ch) * l;
                    let kbase = (o * c + ch) * kl;
                    for t in 0..ol {
                        let start = t * stride;
                        let mut acc = F::ZERO;
                        for d in 0..kl {
                            acc += kd[kbase + d] * xd[xbase + start + d];
                        }
                        od[obase + t] += acc;
                    }
                }
            }
        }
    }
    Ok(tape.push_op(
        out,
        vec![x, kernels],
        Box::new(move |g, needs| {
            let gd = g.data();
            let dx = needs[0].then(|| {
                let mut dx = Tensor::zeros(&[n, c, l]);
                let kd = kv.data();
                let dxd = dx.data_mut();
                for b in 0..n {
                    for o in 0..co {
                        let gbase = (b * co + o) * ol;
                        for ch in 0..c {
                            let xbase = (b * c + ch) * l;
                            let kbase = (o * c + ch) * kl;
                            for t in 0..ol {
                                let start = t * stride;
                                let gval = gd[gbase + t];
                                for d in 0..kl {
                                    dxd[xbase + start + d] += gval * kd[kbase + d];
                                }
                            }
                        }
                    }
                }
                dx
            });
            let dk = needs[1].then(|| {
                let mut dk = Tensor::zeros(&[co, c, kl]);
                let xd = xv.data();
                let dkd = dk.data_mut();
                for b in 0..n {
                    for o in 0..co {
                        let gbase = (b * co + o) * ol;
                        for ch in 0..c {
                            let xbase = (b * c + ch) * l;
                            let kbase = (o * c + ch) * kl;
                            for t in 0..ol {
                                let start = t * stride;
                                let gval = gd[gbase + t];
                                for d in 0..kl {
                                    dkd[kbase + d] += gval * xd[xbase + start + d];
                                }
                            }
                        }
                    }
                }
                dk
            });
            vec![dx, dk]
        }),
    ))
}
