use std::collections::HashMap;

use image::RgbImage;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

pub const DEFAULT_PALETTE_SIZE: usize = 5;
/// Pixels sampled for clustering.
pub const MAX_SAMPLES: usize = 50_000;
const MAX_ITERATIONS: usize = 100;
/// Stop once no centroid moves farther than this (RGB units).
const SHIFT_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaletteEntry {
    #[serde(rename = "hex", serialize_with = "hex")]
    pub color: [u8; 3],
    pub proportion: f64,
}

fn hex<S: Serializer>(c: &[u8; 3], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Palette {
    pub k: usize,
    /// Descending proportion.
    pub colors: Vec<PaletteEntry>,
    /// The sample had fewer than `k` distinct colours; they are returned as-is.
    pub distinct_colors_exhausted: bool,
    pub samples: usize,
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    #[serde(skip)]
    pub objective_history: Vec<f64>,
    /// Final within-cluster sum of squares over the sample.
    pub objective: f64,
}

impl Palette {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("palette serialises")
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Sum of squared distances from each point to its nearest centroid.
pub fn kmeans_objective(points: &[[f64; 3]], centroids: &[[f64; 3]]) -> f64 {
    points.iter().map(|p| nearest(p, centroids).1).sum()
}

fn sample_pixels(image: &RgbImage, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let px: Vec<[f64; 3]> = image
        .pixels()
        .map(|p| [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
        .collect();
    if px.len() <= MAX_SAMPLES {
        return px;
    }
    let mut picks = index::sample(rng, px.len(), MAX_SAMPLES).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| px[i]).collect()
}

fn to_rgb(c: &[f64; 3]) -> [u8; 3] {
    c.map(|v| v.round().clamp(0.0, 255.0) as u8)
}

fn finish(k: usize, mut colors: Vec<PaletteEntry>, exhausted: bool, samples: usize) -> Palette {
    colors.sort_by(|a, b| b.proportion.total_cmp(&a.proportion));
    Palette {
        k,
        colors,
        distinct_colors_exhausted: exhausted,
        samples,
        iterations: 0,
        objective_history: Vec::new(),
        objective: 0.0,
    }
}

/// `k` dominant colours by k-means over (at most [`MAX_SAMPLES`]) RGB pixels.
///
/// Seeding is farthest-point from a first centre drawn with `seed`; Lloyd
/// iterations stop after 100 rounds or when every centroid moves less than 0.5.
/// Entries are ordered by cluster size.
pub fn dominant_palette(image: &RgbImage, k: usize, seed: u64) -> Result<Palette> {
    if k == 0 {
        return Err(Error::invalid("palette size k must be at least 1"));
    }
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::invalid("cannot compute a palette of an empty image"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = sample_pixels(image, &mut rng);
    let n = points.len();

    let mut distinct: HashMap<[u8; 3], usize> = HashMap::new();
    for p in &points {
        *distinct.entry(to_rgb(p)).or_insert(0) += 1;
        if distinct.len() > k {
            break;
        }
    }
    if distinct.len() <= k {
        let mut entries: Vec<PaletteEntry> = distinct
            .into_iter()
            .map(|(color, count)| PaletteEntry {
                color,
                proportion: count as f64 / n as f64,
            })
            .collect();
        entries.sort_by_key(|e| e.color);
        let exhausted = entries.len() < k;
        return Ok(finish(k, entries, exhausted, n));
    }

    let mut centroids = vec![points[rng.random_range(0..n)]];
    let mut min_d: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let far = min_d
            .iter()
            .enumerate()
            .fold(0, |best, (i, &d)| if d > min_d[best] { i } else { best });
        let c = points[far];
        for (d, p) in min_d.iter_mut().zip(&points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }

    let mut assign = vec![0usize; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut objective = 0.0;
        for (a, p) in assign.iter_mut().zip(&points) {
            let (i, d) = nearest(p, &centroids);
            *a = i;
            objective += d;
        }
        if let Some(&prev) = history.last() {
            assert!(
                objective <= prev * (1.0 + 1e-12) + 1e-9,
                "k-means objective increased from {prev} to {objective}"
            );
        }
        history.push(objective);
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assign.iter().zip(&points) {
            counts[a] += 1;
            for c in 0..3 {
                sums[a][c] += p[c];
            }
        }
        let mut shift: f64 = 0.0;
        for i in 0..k {
            if counts[i] > 0 {
                let next = sums[i].map(|s| s / counts[i] as f64);
                shift = shift.max(dist2(&next, &centroids[i]).sqrt());
                centroids[i] = next;
            }
        }
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }

    let mut counts = vec![0usize; k];
    for p in &points {
        counts[nearest(p, &centroids).0] += 1;
    }
    let entries = centroids
        .iter()
        .zip(&counts)
        .map(|(c, &count)| PaletteEntry {
            color: to_rgb(c),
            proportion: count as f64 / n as f64,
        })
        .collect();
    let mut palette = finish(k, entries, false, n);
    palette.iterations = iterations;
    palette.objective = kmeans_objective(&points, &centroids);
    palette.objective_history = history;
    Ok(palette)
}
