use image::RgbImage;
use serde::Serialize;

use crate::error::{Error, Result};

/// Rec. 709 luma of an 8-bit RGB pixel.
pub fn luminance(p: [u8; 3]) -> f64 {
    0.2126 * f64::from(p[0]) + 0.7152 * f64::from(p[1]) + 0.0722 * f64::from(p[2])
}

/// Principal axes of the per-pixel luminance-gradient cloud.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientPca {
    pub mean: [f64; 2],
    /// Unit principal directions, rows ordered like `eigenvalues`.
    pub directions: [[f64; 2]; 2],
    /// `λ1 ≥ λ2 ≥ 0`, population covariance.
    pub eigenvalues: [f64; 2],
    pub samples: usize,
}

impl GradientPca {
    /// Coordinates of `g − mean` along the two principal directions.
    pub fn project(&self, g: [f64; 2]) -> [f64; 2] {
        let d = [g[0] - self.mean[0], g[1] - self.mean[1]];
        self.directions.map(|v| v[0] * d[0] + v[1] * d[1])
    }

    /// `pc1,pc2` CSV of the projected samples.
    pub fn scatter_csv(&self, samples: &[[f64; 2]]) -> String {
        let mut out = String::from("pc1,pc2\n");
        for &g in samples {
            let [a, b] = self.project(g);
            out.push_str(&format!("{a},{b}\n"));
        }
        out
    }
}

/// Sobel `(Gx, Gy)` of the luminance at every interior pixel, row-major.
/// `Gx` grows to the right, `Gy` downwards.
pub fn gradient_samples(image: &RgbImage) -> Result<Vec<[f64; 2]>> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 3 || h < 3 {
        return Err(Error::invalid(format!("gradient PCA needs at least 3×3 pixels, got {w}×{h}")));
    }
    let y: Vec<f64> = image.pixels().map(|p| luminance(p.0)).collect();
    let at = |r: usize, c: usize| y[r * w + c];
    let mut out = Vec::with_capacity((w - 2) * (h - 2));
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
            let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
                - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
            out.push([gx, gy]);
        }
    }
    Ok(out)
}

/// Eigen-decomposition of the symmetric matrix `[[a, b], [b, c]]`:
/// `(λ1, λ2, v1, v2)` with `λ1 ≥ λ2`. A multiple of the identity gets the
/// canonical axes.
pub fn symmetric_eigen2(a: f64, b: f64, c: f64) -> (f64, f64, [f64; 2], [f64; 2]) {
    let half_tr = 0.5 * (a + c);
    let r = (0.5 * (a - c)).hypot(b);
    let (l1, l2) = (half_tr + r, half_tr - r);
    if r == 0.0 {
        return (l1, l2, [1.0, 0.0], [0.0, 1.0]);
    }
    // Of the two null-space candidates pick the one with the larger norm.
    let u = [l1 - c, b];
    let v = [b, l1 - a];
    let pick = if u[0].hypot(u[1]) >= v[0].hypot(v[1]) { u } else { v };
    let n = pick[0].hypot(pick[1]);
    let v1 = [pick[0] / n, pick[1] / n];
    (l1, l2, v1, [-v1[1], v1[0]])
}

/// PCA of the Sobel luminance-gradient cloud (interior pixels).
pub fn luminance_gradient_pca(image: &RgbImage) -> Result<GradientPca> {
    let g = gradient_samples(image)?;
    let n = g.len() as f64;
    let mean = [0, 1].map(|i| g.iter().map(|v| v[i]).sum::<f64>() / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for v in &g {
        let (dx, dy) = (v[0] - mean[0], v[1] - mean[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (l1, l2, v1, v2) = symmetric_eigen2(sxx / n, sxy / n, syy / n);
    Ok(GradientPca {
        mean,
        directions: [v1, v2],
        eigenvalues: [l1.max(0.0), l2.max(0.0)],
        samples: g.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn constant_image_gives_canonical_axes() {
        let p = luminance_gradient_pca(&RgbImage::from_pixel(8, 5, Rgb([40, 90, 200]))).unwrap();
        assert_eq!(p.eigenvalues, [0.0, 0.0]);
        assert_eq!(p.directions, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(p.samples, 6 * 3);
    }

    #[test]
    fn horizontal_step_edge_is_vertical_gradient() {
        let img = RgbImage::from_fn(16, 16, |_, y| if y < 8 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let p = luminance_gradient_pca(&img).unwrap();
        assert!(p.eigenvalues[1].abs() < 1e-9);
        assert!(p.eigenvalues[0] > 0.0);
        assert!(p.directions[0][0].abs() < 1e-12);
        assert!((p.directions[0][1].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen2_reconstructs() {
        for &(a, b, c) in &[(2.0, 1.0, 3.0), (1.0, -4.0, 1.0), (5.0, 0.0, 1.0), (1.0, 0.0, 5.0), (1e-9, 3.0, 1e9)] {
            let (l1, l2, v1, v2) = symmetric_eigen2(a, b, c);
            assert!(l1 >= l2);
            assert!((v1[0] * v2[0] + v1[1] * v2[1]).abs() < 1e-12);
            for (l, v) in [(l1, v1), (l2, v2)] {
                let mv = [a * v[0] + b * v[1], b * v[0] + c * v[1]];
                let scale = l1.abs().max(1.0);
                assert!((mv[0] - l * v[0]).abs() / scale < 1e-9 && (mv[1] - l * v[1]).abs() / scale < 1e-9);
            }
        }
    }

    #[test]
    fn scatter_csv_header_and_rows() {
        let img = RgbImage::from_fn(4, 4, |x, y| Rgb([(x * 60) as u8, (y * 30) as u8, 0]));
        let g = gradient_samples(&img).unwrap();
        let p = luminance_gradient_pca(&img).unwrap();
        let csv = p.scatter_csv(&g);
        assert!(csv.starts_with("pc1,pc2\n"));
        assert_eq!(csv.lines().count(), 1 + 4);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(luminance_gradient_pca(&RgbImage::new(2, 9)).is_err());
    }
}
