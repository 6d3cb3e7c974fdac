use std::path::Path;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::model::GradCamMap;

pub const OVERLAY_ALPHA: f32 = 0.4;

/// Linear blue→red ramp: `0` is pure blue, `1` pure red.
pub fn ramp(t: f32) -> [f32; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    [255.0 * t, 0.0, 255.0 * (1.0 - t)]
}

/// Bilinear resize of a row-major `h×w` grid to `out_h×out_w` with
/// half-pixel centres and edge clamping.
pub fn upsample_bilinear(values: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(values.len(), h * w, "grid size");
    let coord = |dst: usize, n_in: usize, n_out: usize| {
        let s = ((dst as f32 + 0.5) * n_in as f32 / n_out as f32 - 0.5).clamp(0.0, (n_in - 1) as f32);
        let i0 = s.floor() as usize;
        (i0, (i0 + 1).min(n_in - 1), s - i0 as f32)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, h, out_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = coord(ox, w, out_w);
            let top = values[y0 * w + x0] * (1.0 - fx) + values[y0 * w + x1] * fx;
            let bottom = values[y1 * w + x0] * (1.0 - fx) + values[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Heatmap upsampled to the image, coloured with [`ramp`] and blended at
/// [`OVERLAY_ALPHA`] over the source.
pub fn render_overlay(image: &RgbImage, heatmap: &GradCamMap) -> RgbImage {
    let (w, h) = image.dimensions();
    render_overlay_in(image, heatmap, (0, 0, w, h))
}

/// As [`render_overlay`], but the heatmap covers only `region`
/// (`left, top, width, height`); pixels outside it are copied unchanged.
pub fn render_overlay_in(image: &RgbImage, heatmap: &GradCamMap, region: (u32, u32, u32, u32)) -> RgbImage {
    let (w, h) = image.dimensions();
    let (left, top) = (region.0.min(w), region.1.min(h));
    let (rw, rh) = (region.2.min(w - left), region.3.min(h - top));
    let up = upsample_bilinear(&heatmap.heatmap, heatmap.height, heatmap.width, rh as usize, rw as usize);
    let mut out = image.clone();
    for y in 0..rh {
        for x in 0..rw {
            let color = ramp(up[(y * rw + x) as usize]);
            let p = out.get_pixel_mut(left + x, top + y);
            p.0 = std::array::from_fn(|c| {
                ((1.0 - OVERLAY_ALPHA) * f32::from(p[c]) + OVERLAY_ALPHA * color[c]).round().clamp(0.0, 255.0) as u8
            });
        }
    }
    out
}

pub fn save_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tap;
    use image::Rgb;

    fn map(h: usize, w: usize, v: Vec<f32>) -> GradCamMap {
        GradCamMap {
            height: h,
            width: w,
            heatmap: v,
            target_class: 0,
            tap: Tap::Stage4,
        }
    }

    #[test]
    fn region_overlay_leaves_the_border_untouched() {
        let img = RgbImage::from_pixel(10, 8, Rgb([90, 90, 90]));
        let out = render_overlay_in(&img, &map(7, 7, vec![1.0; 49]), (2, 1, 6, 6));
        for (x, y, p) in out.enumerate_pixels() {
            let inside = (2..8).contains(&x) && (1..7).contains(&y);
            let want = if inside { Rgb([156, 54, 54]) } else { Rgb([90, 90, 90]) };
            assert_eq!(*p, want, "({x},{y})");
        }
    }

    #[test]
    fn constant_maps_blend_uniformly() {
        let img = RgbImage::from_fn(5, 3, |x, y| Rgb([(x * 50) as u8, (y * 80) as u8, 7]));
        for (v, c) in [(0.0, ramp(0.0)), (1.0, ramp(1.0))] {
            let out = render_overlay(&img, &map(7, 7, vec![v; 49]));
            assert_eq!(out.dimensions(), img.dimensions());
            for (o, s) in out.pixels().zip(img.pixels()) {
                for ch in 0..3 {
                    let want = (0.6 * f32::from(s[ch]) + 0.4 * c[ch]).round() as u8;
                    assert_eq!(o[ch], want);
                }
            }
        }
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), [0.0, 0.0, 255.0]);
        assert_eq!(ramp(1.0), [255.0, 0.0, 0.0]);
        assert_eq!(ramp(f32::NAN), ramp(0.0));
    }

    #[test]
    fn two_by_two_to_four_by_four_grid() {
        // Half-pixel centres: source coordinate = (d + 0.5) / 2 - 0.5 → -0.25, 0.25, 0.75, 1.25, clamped.
        let up = upsample_bilinear(&[0.0, 1.0, 2.0, 3.0], 2, 2, 4, 4);
        let f = [0.0f32, 0.25, 0.75, 1.0];
        for oy in 0..4 {
            for ox in 0..4 {
                let want = f[ox] * 1.0 + f[oy] * 2.0;
                assert!((up[oy * 4 + ox] - want).abs() < 1e-6, "({oy},{ox})");
            }
        }
    }
}
