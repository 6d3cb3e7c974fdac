//! Per-image style analyses: dominant colour palette, luminance-gradient
//! PCA, and Grad-CAM heatmap overlays.

mod overlay;
mod palette;
mod pca;

pub use overlay::{ramp, render_overlay, render_overlay_in, save_png, upsample_bilinear, OVERLAY_ALPHA};
pub use palette::{dominant_palette, kmeans_objective, Palette, PaletteEntry, DEFAULT_PALETTE_SIZE, MAX_SAMPLES};
pub use pca::{gradient_samples, luminance, luminance_gradient_pca, symmetric_eigen2, GradientPca};
