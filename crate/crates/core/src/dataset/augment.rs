use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_rgb, ManifestEntry, Partition, SplitManifest};
use crate::error::{Error, Result};
use crate::model::synthetic::{fnv1a64, splitmix64};

/// Enable probability and parameter range for one transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeTransform {
    pub probability: f64,
    pub min: f64,
    pub max: f64,
}

impl RangeTransform {
    pub const fn new(probability: f64, min: f64, max: f64) -> Self {
        Self { probability, min, max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub vertical_flip: f64,
    /// Degrees, counter-clockwise.
    pub rotation: RangeTransform,
    pub brightness: RangeTransform,
    pub zoom: RangeTransform,
    pub saturation: RangeTransform,
    /// Baseline JPEG quality, rounded to an integer.
    pub jpeg_quality: RangeTransform,
    pub variants_per_image: usize,
    pub rng_seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            vertical_flip: 0.5,
            rotation: RangeTransform::new(0.5, -15.0, 15.0),
            brightness: RangeTransform::new(0.5, 0.8, 1.2),
            zoom: RangeTransform::new(0.5, 0.9, 1.1),
            saturation: RangeTransform::new(0.5, 0.7, 1.3),
            jpeg_quality: RangeTransform::new(0.5, 30.0, 90.0),
            variants_per_image: 5,
            rng_seed: 0,
        }
    }
}

impl AugmentPolicy {
    /// Every transform disabled.
    pub fn identity(rng_seed: u64) -> Self {
        let mut p = Self {
            rng_seed,
            vertical_flip: 0.0,
            ..Self::default()
        };
        for t in p.ranges_mut() {
            t.probability = 0.0;
        }
        p
    }

    fn ranges_mut(&mut self) -> [&mut RangeTransform; 5] {
        [
            &mut self.rotation,
            &mut self.brightness,
            &mut self.zoom,
            &mut self.saturation,
            &mut self.jpeg_quality,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("rotation", self.rotation),
            ("brightness", self.brightness),
            ("zoom", self.zoom),
            ("saturation", self.saturation),
            ("jpeg_quality", self.jpeg_quality),
        ];
        if !(0.0..=1.0).contains(&self.vertical_flip) {
            return Err(Error::invalid("vertical_flip probability must be in [0, 1]"));
        }
        for (name, t) in named {
            if !(0.0..=1.0).contains(&t.probability) {
                return Err(Error::invalid(format!("{name} probability must be in [0, 1]")));
            }
            if !(t.min.is_finite() && t.max.is_finite() && t.min <= t.max) {
                return Err(Error::invalid(format!("{name} range [{}, {}] is empty", t.min, t.max)));
            }
        }
        if self.brightness.min < 0.0 || self.saturation.min < 0.0 || self.zoom.min <= 0.0 {
            return Err(Error::invalid("brightness/saturation must be >= 0 and zoom > 0"));
        }
        if self.jpeg_quality.min < 1.0 || self.jpeg_quality.max > 100.0 {
            return Err(Error::invalid("jpeg quality must lie in [1, 100]"));
        }
        if self.variants_per_image < 1 {
            return Err(Error::invalid("variants_per_image must be at least 1"));
        }
        Ok(())
    }
}

/// The transforms one variant applies, in application order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VariantPlan {
    pub vertical_flip: bool,
    pub rotation_degrees: Option<f64>,
    pub zoom: Option<f64>,
    pub brightness: Option<f64>,
    pub saturation: Option<f64>,
    pub jpeg_quality: Option<u8>,
}

fn variant_rng(rng_seed: u64, image_seed: u64, variant: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(rng_seed) ^ splitmix64(image_seed.rotate_left(17)));
    rng.set_stream(variant as u64);
    rng
}

/// Samples the transforms of variant `variant`. Every transform draws its
/// gate and parameter whether or not it fires, so the stream layout is fixed.
pub fn plan_variant(policy: &AugmentPolicy, image_seed: u64, variant: usize) -> VariantPlan {
    let mut rng = variant_rng(policy.rng_seed, image_seed, variant);
    let flip = rng.random::<f64>() < policy.vertical_flip;
    let mut draw = |t: &RangeTransform| {
        let fire = rng.random::<f64>() < t.probability;
        let value = t.min + (t.max - t.min) * rng.random::<f64>();
        fire.then_some(value)
    };
    VariantPlan {
        vertical_flip: flip,
        rotation_degrees: draw(&policy.rotation),
        zoom: draw(&policy.zoom),
        brightness: draw(&policy.brightness),
        saturation: draw(&policy.saturation),
        jpeg_quality: draw(&policy.jpeg_quality).map(|q| q.round().clamp(1.0, 100.0) as u8),
    }
}

/// `variants_per_image` augmented copies of `image`, reproducible from
/// `(policy.rng_seed, image_seed, variant index)`.
pub fn augment(image: &RgbImage, policy: &AugmentPolicy, image_seed: u64) -> Result<Vec<RgbImage>> {
    policy.validate()?;
    (0..policy.variants_per_image)
        .map(|v| apply_plan(image, &plan_variant(policy, image_seed, v)))
        .collect()
}

pub fn apply_plan(image: &RgbImage, plan: &VariantPlan) -> Result<RgbImage> {
    let mut out = if plan.vertical_flip { flip_vertical(image) } else { image.clone() };
    if let Some(deg) = plan.rotation_degrees {
        out = rotate(&out, deg);
    }
    if let Some(z) = plan.zoom {
        out = zoom(&out, z);
    }
    if let Some(m) = plan.brightness {
        out = brightness(&out, m);
    }
    if let Some(s) = plan.saturation {
        out = saturation(&out, s);
    }
    if let Some(q) = plan.jpeg_quality {
        out = jpeg_round_trip(&out, q)?;
    }
    Ok(out)
}

pub fn flip_vertical(image: &RgbImage) -> RgbImage {
    image::imageops::flip_vertical(image)
}

/// Catmull-Rom cubic weights for the taps at offsets -1, 0, 1, 2.
fn cubic_weights(t: f64) -> [f64; 4] {
    let (t2, t3) = (t * t, t * t * t);
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Bicubic sample with edge replication outside the image.
fn sample(image: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (i64::from(image.width()), i64::from(image.height()));
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (wx, wy) = (cubic_weights(x - x0 as f64), cubic_weights(y - y0 as f64));
    let mut acc = [0.0; 3];
    for (j, wyj) in wy.iter().enumerate() {
        let yy = (y0 + j as i64 - 1).clamp(0, h - 1) as u32;
        for (i, wxi) in wx.iter().enumerate() {
            let xx = (x0 + i as i64 - 1).clamp(0, w - 1) as u32;
            let p = image.get_pixel(xx, yy).0;
            for c in 0..3 {
                acc[c] += wxi * wyj * f64::from(p[c]);
            }
        }
    }
    acc
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Maps each output pixel back into the source through `inverse` (centred
/// coordinates) and samples bicubically.
fn warp(image: &RgbImage, inverse: impl Fn(f64, f64) -> (f64, f64)) -> RgbImage {
    let cx = (f64::from(image.width()) - 1.0) / 2.0;
    let cy = (f64::from(image.height()) - 1.0) / 2.0;
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let (sx, sy) = inverse(f64::from(x) - cx, f64::from(y) - cy);
        Rgb(sample(image, sx + cx, sy + cy).map(to_u8))
    })
}

/// Rotation about the image centre; exposed corners replicate the edge.
pub fn rotate(image: &RgbImage, degrees: f64) -> RgbImage {
    let (sin, cos) = degrees.to_radians().sin_cos();
    // Positive angles turn the content counter-clockwise on screen.
    warp(image, |dx, dy| (cos * dx - sin * dy, sin * dx + cos * dy))
}

/// Scale about the centre by `factor` (> 1 zooms in).
pub fn zoom(image: &RgbImage, factor: f64) -> RgbImage {
    warp(image, |dx, dy| (dx / factor, dy / factor))
}

pub fn brightness(image: &RgbImage, factor: f64) -> RgbImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        p.0 = p.0.map(|v| to_u8(f64::from(v) * factor));
    }
    out
}

/// Blends each pixel with its Rec. 709 luma: 0 is greyscale, 1 the input.
pub fn saturation(image: &RgbImage, factor: f64) -> RgbImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        let [r, g, b] = p.0.map(f64::from);
        let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
        p.0 = [r, g, b].map(|c| to_u8(y + factor * (c - y)));
    }
    out
}

pub fn jpeg_round_trip(image: &RgbImage, quality: u8) -> Result<RgbImage> {
    let mut buf = Vec::new();
    let to_err = |source| Error::Image {
        path: "<jpeg round trip>".into(),
        source,
    };
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(image)
        .map_err(to_err)?;
    Ok(image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(to_err)?
        .to_rgb8())
}

/// Writes `variants_per_image` PNG variants of every training image under
/// `out_dir/<class dir>/` and returns a manifest of the originals plus the
/// variants, labels unchanged. Validation entries are copied through
/// unaugmented. Variant paths resolve against `root` like the originals:
/// relative when `out_dir` lies under `root`, absolute otherwise.
pub fn augment_training_set(
    manifest: &SplitManifest,
    root: &Path,
    policy: &AugmentPolicy,
    out_dir: &Path,
) -> Result<SplitManifest> {
    policy.validate()?;
    let absolute = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
    let out_abs = absolute(out_dir)?;
    let prefix = match out_abs.strip_prefix(absolute(root)?) {
        Ok(inside) => inside.to_path_buf(),
        Err(_) => out_abs.clone(),
    };
    let mut out = manifest.clone();
    for entry in manifest.partition(Partition::Train) {
        let image = load_rgb(root.join(&entry.path))?;
        let seed = fnv1a64(entry.path.as_bytes());
        let stem = entry.path.rsplit_once('.').map_or(entry.path.as_str(), |(s, _)| s);
        for (v, variant) in augment(&image, policy, seed)?.into_iter().enumerate() {
            let rel = format!("{stem}_aug{v}.png");
            let dest = out_dir.join(&rel);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let mut bytes = Cursor::new(Vec::new());
            variant
                .write_to(&mut bytes, ImageFormat::Png)
                .map_err(|source| Error::Image { path: dest.clone(), source })?;
            fs::write(&dest, bytes.into_inner()).map_err(|e| Error::io(&dest, e))?;
            out.entries.push(ManifestEntry {
                path: prefix.join(&rel).to_string_lossy().replace('\\', "/"),
                class_index: entry.class_index,
                partition: Partition::Train,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(w: u32, h: u32, seed: u64) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            let v = splitmix64(seed ^ (u64::from(y) << 32 | u64::from(x)));
            Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
        })
    }

    #[test]
    fn default_policy_is_valid_and_yields_five() {
        let p = AugmentPolicy::default();
        p.validate().unwrap();
        let img = noise(32, 24, 1);
        let out = augment(&img, &p, 99).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|v| v.dimensions() == (32, 24)));
    }

    #[test]
    fn invalid_policies_rejected() {
        let mut p = AugmentPolicy::default();
        p.rotation = RangeTransform::new(0.5, 10.0, -10.0);
        assert!(p.validate().is_err());
        let mut p = AugmentPolicy::default();
        p.variants_per_image = 0;
        assert!(p.validate().is_err());
        let mut p = AugmentPolicy::default();
        p.vertical_flip = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn identity_policy_copies_input() {
        let img = noise(17, 9, 3);
        let out = augment(&img, &AugmentPolicy::identity(4), 5).unwrap();
        assert!(out.iter().all(|v| *v == img));
    }

    #[test]
    fn forced_flip_is_an_involution() {
        let mut p = AugmentPolicy::identity(0);
        p.vertical_flip = 1.0;
        let img = noise(20, 11, 8);
        for v in augment(&img, &p, 1).unwrap() {
            assert_ne!(v, img);
            assert_eq!(flip_vertical(&v), img);
        }
    }

    #[test]
    fn plans_differ_across_variants_and_images() {
        let p = AugmentPolicy::default();
        let plans: Vec<_> = (0..5).map(|v| plan_variant(&p, 7, v)).collect();
        assert!(plans.windows(2).any(|w| w[0] != w[1]));
        assert_ne!(plan_variant(&p, 7, 0), plan_variant(&p, 8, 0));
        assert_eq!(plan_variant(&p, 7, 3), plan_variant(&p, 7, 3));
    }

    #[test]
    fn brightness_and_saturation_endpoints() {
        let img = noise(8, 8, 2);
        assert_eq!(brightness(&img, 1.0), img);
        assert_eq!(saturation(&img, 1.0), img);
        let gray = saturation(&img, 0.0);
        assert!(gray.pixels().all(|p| p.0[0].abs_diff(p.0[1]) == 0 && p.0[1] == p.0[2]));
        assert_eq!(zoom(&img, 1.0), img);
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn jpeg_round_trip_keeps_shape_and_is_close() {
        let img = RgbImage::from_fn(32, 32, |x, y| Rgb([(x * 8) as u8, (y * 8) as u8, 128]));
        let out = jpeg_round_trip(&img, 90).unwrap();
        assert_eq!(out.dimensions(), img.dimensions());
        let mean_err: f64 = img
            .as_raw()
            .iter()
            .zip(out.as_raw())
            .map(|(a, b)| f64::from(a.abs_diff(*b)))
            .sum::<f64>()
            / img.as_raw().len() as f64;
        assert!(mean_err < 4.0, "{mean_err}");
    }
}
