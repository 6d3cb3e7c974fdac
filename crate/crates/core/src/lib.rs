//! Fine-art style classification and image retrieval on a pre-activation
//! ResNet-50 backbone.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense NHWC tensors and the numeric layer kernels.
//! - [`weights`]: the `.atlr` named-tensor archive format.
//! - [`model`]: network assembly, forward passes with feature taps, Grad-CAM.
//! - [`dataset`]: corpus ingest and split, preprocessing, seeded augmentation.
//! - [`head`]: frozen-backbone feature tables and classification-head training.
//! - [`metrics`]: confusion matrices, precision/recall/F1, top-k reports.
//! - [`analysis`]: dominant palettes, luminance-gradient PCA, heatmap overlays.
//! - [`retrieval`]: cosine-similarity embedding index.

pub mod analysis;
pub mod dataset;
mod error;
pub mod head;
pub mod metrics;
pub mod model;
pub mod retrieval;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use weights::WeightArchive;

/// The nineteen painting styles, in class-index order.
pub const STYLE_CLASSES: [&str; 19] = [
    "Abstract Expressionism",
    "Art Nouveau",
    "Baroque",
    "Cubism",
    "Early Renaissance",
    "Expressionism",
    "High Renaissance",
    "Impressionism",
    "Mannerism",
    "Naive Art",
    "Neoclassicism",
    "Northern Renaissance",
    "Post-Impressionism",
    "Realism",
    "Rococo",
    "Romanticism",
    "Surrealism",
    "Symbolism",
    "Ukiyo-e",
];
