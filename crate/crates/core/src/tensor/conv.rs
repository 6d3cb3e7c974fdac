use super::{ConvParams, Padding, Tensor};
use crate::error::{Error, Result};

/// Output size and leading padding along one spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub output: usize,
    pub pad_before: usize,
    pub pad_after: usize,
}

impl ConvGeometry {
    /// Resolves `padding` for an axis of `size` swept by a `window` with
    /// `stride`. The output obeys `floor((size + pad_total - window) / stride) + 1`.
    pub fn new(size: usize, window: usize, stride: usize, padding: Padding) -> Result<Self> {
        if stride < 1 || window < 1 {
            return Err(Error::invalid("window and stride must be at least 1"));
        }
        let pad_total = match padding {
            Padding::Valid => 0,
            Padding::Same => {
                let out = size.div_ceil(stride);
                ((out - 1) * stride + window).saturating_sub(size)
            }
        };
        if size + pad_total < window {
            return Err(Error::invalid(format!(
                "window {window} larger than padded input {}",
                size + pad_total
            )));
        }
        let pad_before = pad_total / 2;
        Ok(Self {
            output: (size + pad_total - window) / stride + 1,
            pad_before,
            pad_after: pad_total - pad_before,
        })
    }
}

struct Plan {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    rows: ConvGeometry,
    cols: ConvGeometry,
}

fn plan(input: &Tensor, params: &ConvParams) -> Result<Plan> {
    input.expect_rank(4, "conv2d")?;
    let s = input.shape();
    let (kh, kw, kcin, cout) = params.dims();
    if s[3] != kcin {
        return Err(Error::ShapeMismatch {
            op: "conv2d (input vs kernel channels)",
            left: s.to_vec(),
            right: params.kernel().shape().to_vec(),
        });
    }
    Ok(Plan {
        n: s[0],
        h: s[1],
        w: s[2],
        cin: s[3],
        kh,
        kw,
        cout,
        stride: params.stride(),
        rows: ConvGeometry::new(s[1], kh, params.stride(), params.padding())?,
        cols: ConvGeometry::new(s[2], kw, params.stride(), params.padding())?,
    })
}

/// 2-D convolution over an `N×H×W×Cin` batch, lowered to im2col + GEMM.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let p = plan(input, params)?;
    let (oh, ow) = (p.rows.output, p.cols.output);
    let m = p.n * oh * ow;
    let k = p.kh * p.kw * p.cin;
    let x = input.data();

    let pointwise = p.kh == 1 && p.kw == 1 && p.stride == 1;
    let lowered;
    let a: &[f32] = if pointwise {
        x
    } else {
        lowered = im2col(x, &p);
        &lowered
    };

    let mut out = match params.bias() {
        Some(b) => b.data().repeat(m),
        None => vec![0.0; m * p.cout],
    };
    sgemm(m, k, p.cout, a, params.kernel().data(), &mut out, 1.0);
    Tensor::new(vec![p.n, oh, ow, p.cout], out)
}

/// Row `(b, oy, ox)` holds the `kH×kW×Cin` receptive field, zero where the
/// window hangs over the padding.
fn im2col(x: &[f32], p: &Plan) -> Vec<f32> {
    let (oh, ow) = (p.rows.output, p.cols.output);
    let k = p.kh * p.kw * p.cin;
    let mut cols = vec![0.0f32; p.n * oh * ow * k];
    for b in 0..p.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = ((b * oh + oy) * ow + ox) * k;
                for ky in 0..p.kh {
                    let iy = (oy * p.stride + ky) as isize - p.rows.pad_before as isize;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    for kx in 0..p.kw {
                        let ix = (ox * p.stride + kx) as isize - p.cols.pad_before as isize;
                        if ix < 0 || ix >= p.w as isize {
                            continue;
                        }
                        let src = ((b * p.h + iy as usize) * p.w + ix as usize) * p.cin;
                        let dst = row + (ky * p.kw + kx) * p.cin;
                        cols[dst..dst + p.cin].copy_from_slice(&x[src..src + p.cin]);
                    }
                }
            }
        }
    }
    cols
}

/// `c[m×n] = a[m×k] · b[k×n] + beta · c`, all row-major.
pub(crate) fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the row-major extents asserted above and `c`
    // does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Direct sliding-window convolution. Slow; kept as the reference path the
/// GEMM lowering is tested against.
pub fn conv2d_direct(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let p = plan(input, params)?;
    let (oh, ow) = (p.rows.output, p.cols.output);
    let x = input.data();
    let kernel = params.kernel().data();
    let mut out = vec![0.0f32; p.n * oh * ow * p.cout];
    for b in 0..p.n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ((b * oh + oy) * ow + ox) * p.cout;
                for co in 0..p.cout {
                    let mut acc = params.bias().map_or(0.0, |bias| bias.data()[co]);
                    for ky in 0..p.kh {
                        let iy = (oy * p.stride + ky) as isize - p.rows.pad_before as isize;
                        if iy < 0 || iy >= p.h as isize {
                            continue;
                        }
                        for kx in 0..p.kw {
                            let ix = (ox * p.stride + kx) as isize - p.cols.pad_before as isize;
                            if ix < 0 || ix >= p.w as isize {
                                continue;
                            }
                            let src = ((b * p.h + iy as usize) * p.w + ix as usize) * p.cin;
                            for ci in 0..p.cin {
                                acc += x[src + ci] * kernel[((ky * p.kw + kx) * p.cin + ci) * p.cout + co];
                            }
                        }
                    }
                    out[base + co] = acc;
                }
            }
        }
    }
    Tensor::new(vec![p.n, oh, ow, p.cout], out)
}
