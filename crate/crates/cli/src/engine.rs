//! Immutable inference snapshot shared by the CLI and the HTTP service.

use std::path::{Path, PathBuf};

use atelier_core::analysis::{dominant_palette, render_overlay_in, Palette};
use atelier_core::dataset::{crop_region, preprocess_rgb};
use atelier_core::head::HeadWeights;
use atelier_core::metrics::{top_k, TopKEntry};
use atelier_core::model::{build_model, ModelGraph, Tap};
use atelier_core::retrieval::{EmbeddingIndex, SearchHit};
use atelier_core::weights::read_archive;
use atelier_core::{Error, STYLE_CLASSES};
use image::RgbImage;
use serde::Serialize;

use crate::config::ServiceConfig;
use crate::error::{CliError, Result};

/// Checksums identifying the loaded artifacts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub architecture: &'static str,
    pub num_classes: usize,
    pub weights_digest: String,
    pub head_digest: Option<String>,
    pub backbone_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifyReport {
    pub predictions: Vec<TopKEntry>,
    pub model: ModelInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchReport {
    pub hits: Vec<SearchHit>,
}

fn hex(v: u32) -> String {
    format!("{v:08x}")
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[derive(Debug)]
pub struct Engine {
    model: ModelGraph,
    classes: Vec<String>,
    index: Option<EmbeddingIndex>,
    images: Option<PathBuf>,
    info: ModelInfo,
}

impl Engine {
    /// Loads and verifies every artifact named by `cfg`.
    ///
    /// The class count comes from the head file, else the class list, else
    /// the nineteen styles.
    pub fn load(cfg: &ServiceConfig) -> Result<Self> {
        cfg.check_files()?;
        let weights_path = cfg.weights.as_ref().expect("checked above");
        let archive = read_archive(weights_path).map_err(Error::from)?;
        let head = cfg
            .head
            .as_ref()
            .map(|p| read_archive(p).map_err(Error::from).and_then(|a| Ok((HeadWeights::from_archive(&a)?, a.digest()))))
            .transpose()?;
        let classes = match &cfg.classes {
            Some(p) => read_class_names(p)?,
            None => {
                let k = head.as_ref().map_or(STYLE_CLASSES.len(), |(h, _)| h.classes);
                if k != STYLE_CLASSES.len() {
                    return Err(CliError::InvalidConfig(format!(
                        "head has {k} classes; a class list file is required"
                    )));
                }
                STYLE_CLASSES.iter().map(|s| s.to_string()).collect()
            }
        };
        let mut model = build_model(classes.len(), &archive)?;
        if let Some((h, _)) = &head {
            if h.classes != classes.len() {
                return Err(CliError::InvalidConfig(format!(
                    "head has {} classes but the class list names {}",
                    h.classes,
                    classes.len()
                )));
            }
            model = h.apply_to(model)?;
        } else if !archive
            .get("head/W")
            .is_some_and(|w| w.shape() == [atelier_core::model::FEATURE_DIM, classes.len()])
        {
            return Err(CliError::InvalidConfig(format!(
                "no head file given and the weights carry no {}-class head",
                classes.len()
            )));
        }
        let index = cfg.index.as_ref().map(EmbeddingIndex::load).transpose()?;
        let info = ModelInfo {
            architecture: "ResNet50V2",
            num_classes: classes.len(),
            weights_digest: hex(archive.digest()),
            head_digest: head.map(|(_, d)| hex(d)),
            backbone_checksum: hex(model.backbone_checksum()),
        };
        log::info!(
            "loaded {} ({} classes, index: {})",
            weights_path.display(),
            classes.len(),
            index.as_ref().map_or("none".to_string(), |i| format!("{} entries", i.len()))
        );
        Ok(Self {
            model,
            classes,
            index,
            images: cfg.images.clone(),
            info,
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn index(&self) -> Option<&EmbeddingIndex> {
        self.index.as_ref()
    }

    pub fn model(&self) -> &ModelGraph {
        &self.model
    }

    pub fn classify(&self, image: &RgbImage, k: usize) -> Result<ClassifyReport> {
        let input = preprocess_rgb(image)?.unsqueeze();
        let out = self.model.forward(&input, &[])?;
        let report = top_k(out.probs.data(), &self.classes, k)?;
        Ok(ClassifyReport {
            predictions: report.predictions,
            model: self.info.clone(),
        })
    }

    pub fn embed(&self, image: &RgbImage, tap: Tap) -> Result<Vec<f32>> {
        let input = preprocess_rgb(image)?.unsqueeze();
        Ok(self.model.embed(&input, tap)?.into_data())
    }

    fn require_index(&self) -> Result<&EmbeddingIndex> {
        self.index.as_ref().ok_or(CliError::NoIndex)
    }

    pub fn search_image(&self, image: &RgbImage, k: usize) -> Result<SearchReport> {
        let index = self.require_index()?;
        let query = self.embed(image, index.tap())?;
        Ok(SearchReport {
            hits: index.search(&query, k)?,
        })
    }

    pub fn search_id(&self, id: &str, k: usize) -> Result<SearchReport> {
        let hits = self.require_index()?.search_by_id(id, k).map_err(|e| match e {
            Error::UnknownId(id) => CliError::NotFound(format!("unknown id `{id}`")),
            other => other.into(),
        })?;
        Ok(SearchReport { hits })
    }

    /// Source image of an indexed work.
    pub fn image_for_id(&self, id: &str) -> Result<RgbImage> {
        let index = self.require_index()?;
        let pos = index
            .position(id)
            .ok_or_else(|| CliError::NotFound(format!("unknown id `{id}`")))?;
        let rel = Path::new(&index.entries()[pos].path);
        let path = match &self.images {
            Some(root) if rel.is_relative() => root.join(rel),
            _ => rel.to_path_buf(),
        };
        Ok(atelier_core::dataset::load_rgb(path)?)
    }

    /// Grad-CAM overlay at the source resolution for `class` (default: the
    /// top prediction). Returns the image and the class used.
    pub fn gradcam(&self, image: &RgbImage, class: Option<usize>) -> Result<(RgbImage, usize)> {
        let input = preprocess_rgb(image)?;
        let class = match class {
            Some(c) if c >= self.classes.len() => {
                return Err(Error::ClassOutOfRange {
                    index: c,
                    classes: self.classes.len(),
                }
                .into())
            }
            Some(c) => c,
            None => {
                let out = self.model.forward(&input.clone().unsqueeze(), &[])?;
                argmax(out.probs.data())
            }
        };
        let map = self.model.grad_cam(&input, class)?;
        let region = crop_region(image.width(), image.height());
        Ok((render_overlay_in(image, &map, region), class))
    }

    pub fn palette(&self, image: &RgbImage, k: usize, seed: u64) -> Result<Palette> {
        Ok(dominant_palette(image, k, seed)?)
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(v: &[f32]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}
