//! Layer forwards and their reverse-mode gradients.

use super::Tensor;
use crate::{Error, ProbVector, Result};

#[inline]
fn widx(out_ch: usize, in_ch: usize, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
    debug_assert!(oc < out_ch);
    ((oc * in_ch + ic) * 3 + ky) * 3 + kx
}

/// Output rows/cols that read from input offset `k − 1` without leaving the image.
#[inline]
fn valid(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1, n),
        1 => (0, n),
        _ => (0, n - 1),
    }
}

/// 3×3 convolution, stride 1, zero padding 1. Weights are `[out][in][ky][kx]`.
pub fn conv3x3_forward(x: &Tensor, in_ch: usize, out_ch: usize, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if c != in_ch {
        return Err(Error::InvalidInput(format!("conv expects {in_ch} channels, got {c}")));
    }
    if weights.len() != out_ch * in_ch * 9 || bias.len() != out_ch {
        return Err(Error::InvalidInput("conv parameter sizes do not match channels".into()));
    }
    let plane = h * w;
    let src = x.data();
    let mut out = vec![0.0; out_ch * plane];
    for oc in 0..out_ch {
        let dst = &mut out[oc * plane..(oc + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..in_ch {
            let inp = &src[ic * plane..(ic + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = valid(ky, h);
                for kx in 0..3 {
                    let wv = weights[widx(out_ch, in_ch, oc, ic, ky, kx)];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &inp[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (d, s) in drow.iter_mut().zip(srow) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![out_ch, h, w], out).expect("shape matches"))
}

/// Gradients of a 3×3 convolution: (d input, d weights, d bias).
pub fn conv3x3_backward(
    x: &Tensor,
    grad_out: &Tensor,
    in_ch: usize,
    out_ch: usize,
    weights: &[f64],
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (_, h, w) = x.chw().expect("validated in forward");
    let plane = h * w;
    let src = x.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; in_ch * plane];
    let mut dw = vec![0.0; weights.len()];
    let mut db = vec![0.0; out_ch];
    for oc in 0..out_ch {
        let gout = &g[oc * plane..(oc + 1) * plane];
        db[oc] = gout.iter().sum();
        for ic in 0..in_ch {
            let inp = &src[ic * plane..(ic + 1) * plane];
            let dinp = &mut dx[ic * plane..(ic + 1) * plane];
            for ky in 0..3 {
                let (y0, y1) = valid(ky, h);
                for kx in 0..3 {
                    let k = widx(out_ch, in_ch, oc, ic, ky, kx);
                    let wv = weights[k];
                    let (x0, x1) = valid(kx, w);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let grow = &gout[y * w + x0..y * w + x1];
                        let s0 = sy * w + x0 + kx - 1;
                        let srow = &inp[s0..s0 + grow.len()];
                        let drow = &mut dinp[s0..s0 + grow.len()];
                        for ((gv, s), d) in grow.iter().zip(srow).zip(drow) {
                            acc += gv * s;
                            *d += gv * wv;
                        }
                    }
                    dw[k] = acc;
                }
            }
        }
    }
    (x.with_data(dx), dw, db)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.with_data(x.data().iter().map(|&v| v.max(0.0)).collect())
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    x.with_data(
        x.data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
    )
}

/// Non-overlapping 2×2 max pooling.
pub fn maxpool2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidInput(format!("maxpool2 needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i = base + 2 * y * w + 2 * xx;
                out.push(d[i].max(d[i + 1]).max(d[i + w]).max(d[i + w + 1]));
            }
        }
    }
    Ok(Tensor::new(vec![c, oh, ow], out).expect("shape matches"))
}

/// Routes each pooled gradient to the first maximal element of its window.
pub fn maxpool2_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let (c, h, w) = x.chw().expect("validated in forward");
    let (oh, ow) = (h / 2, w / 2);
    let d = x.data();
    let g = grad_out.data();
    let mut dx = vec![0.0; d.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i = base + 2 * y * w + 2 * xx;
                let cands = [i, i + 1, i + w, i + w + 1];
                let mut arg = cands[0];
                for &j in &cands[1..] {
                    if d[j] > d[arg] {
                        arg = j;
                    }
                }
                dx[arg] += g[(ch * oh + y) * ow + xx];
            }
        }
    }
    x.with_data(dx)
}

/// `out = W x + b` with `W` stored `[out][in]`.
pub fn dense_forward(x: &Tensor, inputs: usize, outputs: usize, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
    if x.shape().len() != 1 || x.data().len() != inputs {
        return Err(Error::InvalidInput(format!(
            "dense expects a flat {inputs}-vector, got {:?}",
            x.shape()
        )));
    }
    let out = (0..outputs)
        .map(|o| {
            let row = &weights[o * inputs..(o + 1) * inputs];
            bias[o] + row.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok(Tensor::new(vec![outputs], out).expect("shape matches"))
}

pub fn dense_backward(x: &Tensor, grad_out: &Tensor, inputs: usize, outputs: usize, weights: &[f64]) -> (Tensor, Vec<f64>, Vec<f64>) {
    let g = grad_out.data();
    let xs = x.data();
    let mut dx = vec![0.0; inputs];
    let mut dw = vec![0.0; inputs * outputs];
    for o in 0..outputs {
        let row = &weights[o * inputs..(o + 1) * inputs];
        let drow = &mut dw[o * inputs..(o + 1) * inputs];
        for i in 0..inputs {
            drow[i] = g[o] * xs[i];
            dx[i] += g[o] * row[i];
        }
    }
    (x.with_data(dx), dw, g.to_vec())
}

/// Numerically stable two-class softmax.
pub fn softmax(logits: [f64; 2]) -> Result<ProbVector> {
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite logits {logits:?}")));
    }
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let s = e[0] + e[1];
    Ok(ProbVector::from_raw_unchecked([e[0] / s, e[1] / s]))
}
