use super::conv::{sgemm, ConvGeometry};
use super::{BatchNormParams, Padding, Tensor};
use crate::error::{Error, Result};

/// Inference-mode batch normalisation over the last (channel) axis.
pub fn batch_norm_inference(input: &Tensor, params: &BatchNormParams) -> Result<Tensor> {
    let c = params.channels();
    if input.shape().last() != Some(&c) {
        return Err(Error::ShapeMismatch {
            op: "batch_norm_inference (channels)",
            left: input.shape().to_vec(),
            right: vec![c],
        });
    }
    let scale: Vec<f32> = params
        .gamma
        .data()
        .iter()
        .zip(params.moving_var.data())
        .map(|(g, v)| g / (v + params.epsilon).sqrt())
        .collect();
    let mean = params.moving_mean.data();
    let beta = params.beta.data();
    let mut out = input.data().to_vec();
    for px in out.chunks_exact_mut(c) {
        for (i, x) in px.iter_mut().enumerate() {
            *x = (*x - mean[i]) * scale[i] + beta[i];
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Relu,
    Add,
}

pub fn elementwise(op: Elementwise, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    match (op, b) {
        (Elementwise::Relu, None) => Ok(relu(a)),
        (Elementwise::Add, Some(b)) => add(a, b),
        (Elementwise::Relu, Some(_)) => Err(Error::invalid("relu takes a single operand")),
        (Elementwise::Add, None) => Err(Error::invalid("add needs two operands")),
    }
}

pub fn relu(a: &Tensor) -> Tensor {
    let data = a.data().iter().map(|&x| x.max(0.0)).collect();
    Tensor {
        shape: a.shape().to_vec(),
        data,
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "add",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    /// Window maximum; padded positions never win.
    Max {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    /// Mean over `H×W`, producing `N×C`.
    GlobalAvg,
}

pub fn pool(input: &Tensor, mode: Pool) -> Result<Tensor> {
    match mode {
        Pool::Max {
            window,
            stride,
            padding,
        } => max_pool(input, window, stride, padding),
        Pool::GlobalAvg => global_avg_pool(input),
    }
}

pub fn max_pool(input: &Tensor, window: usize, stride: usize, padding: Padding) -> Result<Tensor> {
    input.expect_rank(4, "max_pool")?;
    let s = input.shape();
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let rows = ConvGeometry::new(h, window, stride, padding)?;
    let cols = ConvGeometry::new(w, window, stride, padding)?;
    let x = input.data();
    let mut out = vec![f32::NEG_INFINITY; n * rows.output * cols.output * c];
    for b in 0..n {
        for oy in 0..rows.output {
            let y0 = (oy * stride) as isize - rows.pad_before as isize;
            for ox in 0..cols.output {
                let x0 = (ox * stride) as isize - cols.pad_before as isize;
                let dst = ((b * rows.output + oy) * cols.output + ox) * c;
                for iy in y0.max(0)..(y0 + window as isize).min(h as isize) {
                    for ix in x0.max(0)..(x0 + window as isize).min(w as isize) {
                        let src = ((b * h + iy as usize) * w + ix as usize) * c;
                        for ch in 0..c {
                            out[dst + ch] = out[dst + ch].max(x[src + ch]);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, rows.output, cols.output, c], out)
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    input.expect_rank(4, "global_avg_pool")?;
    let s = input.shape();
    let (n, hw, c) = (s[0], s[1] * s[2], s[3]);
    let mut out = vec![0.0f32; n * c];
    for (b, sample) in input.data().chunks_exact(hw * c).enumerate() {
        let acc = &mut out[b * c..(b + 1) * c];
        for px in sample.chunks_exact(c) {
            for (a, v) in acc.iter_mut().zip(px) {
                *a += v;
            }
        }
        let inv = 1.0 / hw as f32;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Tensor::new(vec![n, c], out)
}

/// `y = x·W + b` for `x: N×D`, `W: D×K`, `b: K`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    input.expect_rank(2, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let (wd, k) = (weights.shape()[0], weights.shape()[1]);
    if d != wd {
        return Err(Error::ShapeMismatch {
            op: "dense (input vs weights)",
            left: input.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    if bias.shape() != [k] {
        return Err(Error::ShapeMismatch {
            op: "dense (weights vs bias)",
            left: weights.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let mut out = bias.data().repeat(n);
    sgemm(n, d, k, input.data(), weights.data(), &mut out, 1.0);
    Tensor::new(vec![n, k], out)
}

/// Row-wise softmax with max subtraction. Rejects NaN logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    logits.expect_rank(2, "softmax")?;
    if logits.data().iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    let k = logits.shape()[1];
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks_exact(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&v| f64::from(v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / sum) as f32));
    }
    Tensor::new(logits.shape().to_vec(), out)
}
