use serde::Serialize;

use super::Tap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class activation heatmap over a tap's spatial grid, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCamMap {
    pub height: usize,
    pub width: usize,
    /// Row-major `height × width`.
    pub heatmap: Vec<f32>,
    pub target_class: usize,
    pub tap: Tap,
}

impl GradCamMap {
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.heatmap[y * self.width + x]
    }

    pub fn is_zero(&self) -> bool {
        self.heatmap.iter().all(|&v| v == 0.0)
    }

    /// Position of the maximum (first in row-major order on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .heatmap
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.heatmap[best] { i } else { best });
        (i / self.width, i % self.width)
    }
}

/// Grad-CAM for an activation `A` (`H×W×C`, or `1×H×W×C`) that feeds a
/// global-average-pool + dense head with weights `C×K`.
///
/// Through that head `∂logit_c/∂A[y,x,k] = W[k,c] / (H·W)` at every
/// position, so the channel weights are `α_k = W[k,c] / (H·W)` and the map is
/// `ReLU(Σ_k α_k·A[:,:,k])` scaled to a maximum of 1.
pub fn grad_cam_from_activation(activation: &Tensor, head_weights: &Tensor, class_index: usize) -> Result<GradCamMap> {
    let shape = activation.shape();
    let (h, w, c) = match *shape {
        [h, w, c] | [1, h, w, c] => (h, w, c),
        _ => {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "grad-cam expects a single H×W×C activation".into(),
            })
        }
    };
    head_weights.expect_rank(2, "grad-cam head weights")?;
    let k = head_weights.shape()[1];
    if head_weights.shape()[0] != c {
        return Err(Error::ShapeMismatch {
            op: "grad-cam (activation channels vs head rows)",
            left: shape.to_vec(),
            right: head_weights.shape().to_vec(),
        });
    }
    if class_index >= k {
        return Err(Error::ClassOutOfRange {
            index: class_index,
            classes: k,
        });
    }
    let area = (h * w) as f64;
    let alpha: Vec<f64> = (0..c)
        .map(|ch| f64::from(head_weights.data()[ch * k + class_index]) / area)
        .collect();
    let raw: Vec<f64> = activation
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().zip(&alpha).map(|(&a, &w)| f64::from(a) * w).sum::<f64>().max(0.0))
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    let heatmap = if max > 0.0 {
        raw.iter().map(|&v| (v / max) as f32).collect()
    } else {
        vec![0.0; raw.len()]
    };
    Ok(GradCamMap {
        height: h,
        width: w,
        heatmap,
        target_class: class_index,
        tap: Tap::Stage4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_channel_is_proportional() {
        let a = Tensor::new(vec![2, 2, 1], vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap();
        let m = grad_cam_from_activation(&a, &w, 0).unwrap();
        assert_eq!(m.heatmap, vec![0.0, 0.25, 0.5, 1.0]);
        assert_eq!(m.argmax(), (1, 1));
        // Negative weight for class 1 with non-negative A: everything clipped.
        assert!(grad_cam_from_activation(&a, &w, 1).unwrap().is_zero());
    }

    #[test]
    fn zero_column_gives_zero_map() {
        let a = Tensor::from_fn(vec![3, 3, 4], |i| i as f32).unwrap();
        let w = Tensor::from_fn(vec![4, 2], |i| if i % 2 == 0 { 0.0 } else { 1.0 }).unwrap();
        assert!(grad_cam_from_activation(&a, &w, 0).unwrap().is_zero());
    }

    #[test]
    fn mixed_sign_toy_matches_hand_evaluation() {
        // A[:,:,0] = [[1,2],[3,4]], A[:,:,1] = [[4,1],[0,2]], W column = (2, -3).
        // α = (0.5, -0.75); Σ α_k A_k = [[-2.5, 0.25], [1.5, 0.5]] → ReLU → /1.5.
        let a = Tensor::new(vec![2, 2, 2], vec![1.0, 4.0, 2.0, 1.0, 3.0, 0.0, 4.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 1], vec![2.0, -3.0]).unwrap();
        let m = grad_cam_from_activation(&a, &w, 0).unwrap();
        let expected = [0.0, 0.25 / 1.5, 1.0, 0.5 / 1.5];
        for (got, want) in m.heatmap.iter().zip(expected) {
            assert!((f64::from(*got) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_class() {
        let a = Tensor::zeros(vec![1, 2, 2, 3]).unwrap();
        let w = Tensor::zeros(vec![3, 5]).unwrap();
        assert!(matches!(
            grad_cam_from_activation(&a, &w, 5),
            Err(Error::ClassOutOfRange { index: 5, classes: 5 })
        ));
    }
}
