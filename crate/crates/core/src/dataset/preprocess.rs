use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RESIZE_SHORT_SIDE: u32 = 256;
pub const CROP_SIZE: u32 = 224;

pub fn load_image(path: impl AsRef<Path>) -> Result<DynamicImage> {
    let path = path.as_ref();
    image::open(path).map_err(|source| Error::Image {
        path: path.to_owned(),
        source,
    })
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    load_image(path).map(|img| img.to_rgb8())
}

/// Bilinear (triangle-filter) resize so the shorter side equals `target`.
pub fn resize_short_side(image: &RgbImage, target: u32) -> RgbImage {
    let (w, h) = image.dimensions();
    let (short, long) = (w.min(h), w.max(h));
    let scaled_long = ((u64::from(long) * u64::from(target) + u64::from(short) / 2) / u64::from(short)) as u32;
    let (nw, nh) = if w <= h { (target, scaled_long) } else { (scaled_long, target) };
    imageops::resize(image, nw, nh, FilterType::Triangle)
}

/// Shorter side to 256, centre crop 224×224, pixels mapped to `[-1, 1]`.
pub fn preprocess_rgb(image: &RgbImage) -> Result<Tensor> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::invalid("cannot preprocess an empty image"));
    }
    let resized = resize_short_side(image, RESIZE_SHORT_SIDE);
    let left = (resized.width() - CROP_SIZE) / 2;
    let top = (resized.height() - CROP_SIZE) / 2;
    let crop = imageops::crop_imm(&resized, left, top, CROP_SIZE, CROP_SIZE).to_image();
    let data = crop.as_raw().iter().map(|&v| f32::from(v) / 127.5 - 1.0).collect();
    Tensor::new(vec![CROP_SIZE as usize, CROP_SIZE as usize, 3], data)
}

/// The centre crop seen by [`preprocess_rgb`], in source pixel coordinates:
/// `(left, top, width, height)`.
pub fn crop_region(width: u32, height: u32) -> (u32, u32, u32, u32) {
    let short = width.min(height);
    if short == 0 {
        return (0, 0, width, height);
    }
    let scale = f64::from(short) / f64::from(RESIZE_SHORT_SIDE);
    let side = (f64::from(CROP_SIZE) * scale).round().clamp(1.0, f64::from(short)) as u32;
    (width.saturating_sub(side) / 2, height.saturating_sub(side) / 2, side, side)
}

pub fn preprocess(image: &DynamicImage) -> Result<Tensor> {
    preprocess_rgb(&image.to_rgb8())
}
