//! Dense `f32` tensors and the layer kernels the network is assembled from.
//!
//! Layout is channel-last and row-major everywhere: images are `H×W×C`,
//! batches `N×H×W×C`, convolution kernels `kH×kW×Cin×Cout`, dense weights
//! `D×K`. Every kernel is a pure function of its inputs.

mod conv;
mod ops;

pub use conv::{conv2d, conv2d_direct, ConvGeometry};
pub use ops::{
    add, batch_norm_inference, dense, elementwise, global_avg_pool, max_pool, pool, relu, softmax,
    Elementwise, Pool,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that every dimension is positive and that
    /// the element count matches the shape. An empty shape is a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                shape,
                reason: "dimensions must be positive".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("holds {} elements, data has {}", expected, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn from_fn(shape: Vec<usize>, f: impl FnMut(usize) -> f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new shape. The element count must not change.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Prepends a batch axis of size 1.
    pub fn unsqueeze(self) -> Self {
        let mut shape = Vec::with_capacity(self.shape.len() + 1);
        shape.push(1);
        shape.extend_from_slice(&self.shape);
        Self {
            shape,
            data: self.data,
        }
    }

    /// The `index`-th slice along the leading axis.
    pub fn select(&self, index: usize) -> Result<Tensor> {
        let (&n, rest) = self
            .shape
            .split_first()
            .ok_or_else(|| Error::invalid("cannot select from a scalar"))?;
        if index >= n {
            return Err(Error::invalid(format!("index {index} out of range for axis of size {n}")));
        }
        let stride: usize = rest.iter().product();
        Tensor::new(rest.to_vec(), self.data[index * stride..(index + 1) * stride].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first.shape.clone(),
                    right: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn expect_rank(&self, rank: usize, op: &'static str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects a rank-{rank} tensor"),
            });
        }
        Ok(())
    }
}

/// Spatial padding mode for convolution and max pooling.
///
/// `Same` pads so that a stride-1 window keeps the spatial size; when the
/// total padding is odd the extra row/column goes to the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    stride: usize,
    padding: Padding,
    kernel: Tensor,
    bias: Option<Tensor>,
}

impl ConvParams {
    pub fn new(kernel: Tensor, bias: Option<Tensor>, stride: usize, padding: Padding) -> Result<Self> {
        kernel.expect_rank(4, "conv kernel")?;
        if stride < 1 {
            return Err(Error::invalid("convolution stride must be at least 1"));
        }
        let cout = kernel.shape()[3];
        if let Some(b) = &bias {
            if b.shape() != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv bias",
                    left: kernel.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            stride,
            padding,
            kernel,
            bias,
        })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    /// `(kH, kW, Cin, Cout)`.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.kernel.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.as_ref().map_or(0, Tensor::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub(crate) gamma: Tensor,
    pub(crate) beta: Tensor,
    pub(crate) moving_mean: Tensor,
    pub(crate) moving_var: Tensor,
    pub(crate) epsilon: f32,
}

impl BatchNormParams {
    pub fn new(
        gamma: Tensor,
        beta: Tensor,
        moving_mean: Tensor,
        moving_var: Tensor,
        epsilon: f32,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("batch-norm epsilon must be positive, got {epsilon}")));
        }
        let c = gamma.len();
        for t in [&gamma, &beta, &moving_mean, &moving_var] {
            if t.shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op: "batch norm parameters",
                    left: vec![c],
                    right: t.shape().to_vec(),
                });
            }
        }
        if moving_var.data().iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("batch-norm moving variance must be non-negative"));
        }
        Ok(Self {
            gamma,
            beta,
            moving_mean,
            moving_var,
            epsilon,
        })
    }

    /// gamma = 1, beta = 0, mean = 0, var = 1.
    pub fn identity(channels: usize, epsilon: f32) -> Result<Self> {
        Self::new(
            Tensor::full(vec![channels], 1.0)?,
            Tensor::zeros(vec![channels])?,
            Tensor::zeros(vec![channels])?,
            Tensor::full(vec![channels], 1.0)?,
            epsilon,
        )
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert_eq!(Tensor::new(vec![], vec![1.5]).unwrap().len(), 1);
    }

    #[test]
    fn stack_and_select_are_inverse() {
        let a = Tensor::from_fn(vec![2, 3], |i| i as f32).unwrap();
        let b = Tensor::from_fn(vec![2, 3], |i| -(i as f32)).unwrap();
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 3]);
        assert_eq!(s.select(0).unwrap(), a);
        assert_eq!(s.select(1).unwrap(), b);
        assert!(s.select(2).is_err());
    }

    #[test]
    fn batch_norm_params_validate() {
        let ones = || Tensor::full(vec![3], 1.0).unwrap();
        assert!(BatchNormParams::new(ones(), ones(), ones(), ones(), 0.0).is_err());
        assert!(BatchNormParams::new(ones(), ones(), ones(), ones(), -1e-3).is_err());
        let neg = Tensor::full(vec![3], -1.0).unwrap();
        assert!(BatchNormParams::new(ones(), ones(), ones(), neg, 1e-5).is_err());
        let short = Tensor::full(vec![2], 1.0).unwrap();
        assert!(BatchNormParams::new(ones(), short, ones(), ones(), 1e-5).is_err());
    }
}
