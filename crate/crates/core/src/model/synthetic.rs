//! Deterministic stand-in weights.
//!
//! Each element is a counter-based hash of `(seed, slot name, index)` mapped
//! to a uniform range, so any language can regenerate identical values
//! without shipping a 100 MB archive. Convolutions use a He-uniform range;
//! the last convolution of every residual branch is scaled down so that
//! activations stay bounded through sixteen blocks.

use super::slots::{model_manifest, FEATURE_DIM};
use crate::tensor::Tensor;
use crate::weights::WeightArchive;

const RESIDUAL_OUT_GAIN: f64 = 0.2;

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` values uniform in `[lo, hi)` keyed by `(name, seed)`.
pub fn uniform_slot(name: &str, n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f32> {
    let key = fnv1a64(name.as_bytes()) ^ splitmix64(seed);
    let lo = lo as f32;
    let span = hi as f32 - lo;
    (0..n as u64)
        .map(|i| {
            let u = (splitmix64(key.wrapping_add(i)) >> 40) as f32 * (1.0 / 16_777_216.0);
            u * span + lo
        })
        .collect()
}

fn range_for(name: &str, shape: &[usize]) -> (f64, f64) {
    let leaf = name.rsplit('/').next().unwrap_or(name);
    match leaf {
        "kernel" => {
            let fan_in = (shape[0] * shape[1] * shape[2]) as f64;
            let gain = if name.ends_with("conv3/kernel") { RESIDUAL_OUT_GAIN } else { 1.0 };
            let a = gain * (6.0 / fan_in).sqrt();
            (-a, a)
        }
        "W" => {
            let a = (6.0 / FEATURE_DIM as f64).sqrt();
            (-a, a)
        }
        "bias" | "b" => (-0.05, 0.05),
        "gamma" => (0.8, 1.2),
        "beta" | "moving_mean" => (-0.1, 0.1),
        "moving_var" => (0.5, 1.5),
        other => unreachable!("no synthetic range for slot leaf `{other}`"),
    }
}

/// A complete archive for a `num_classes` model.
pub fn synthetic_archive(num_classes: usize, seed: u64) -> WeightArchive {
    let mut archive = WeightArchive::new();
    for slot in model_manifest(num_classes) {
        let (lo, hi) = range_for(&slot.name, &slot.shape);
        let data = uniform_slot(&slot.name, slot.numel(), lo, hi, seed);
        let tensor = Tensor::new(slot.shape, data).expect("manifest shapes are valid");
        archive.insert(slot.name, tensor).expect("manifest names are unique");
    }
    archive
}
