//! Corpus ingest, per-class train/validation split, model-input
//! preprocessing and seeded augmentation.
//!
//! The corpus is a directory with one subdirectory per class. Classes are
//! ordered by directory name, so a corpus laid out with the nineteen style
//! names yields [`crate::STYLE_CLASSES`] order.

mod augment;
mod preprocess;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use augment::{
    apply_plan, augment, augment_training_set, flip_vertical, plan_variant, rotate, AugmentPolicy, RangeTransform, VariantPlan,
};
pub use preprocess::{crop_region, load_image, load_rgb, preprocess, preprocess_rgb, resize_short_side, CROP_SIZE, RESIZE_SHORT_SIDE};

use crate::error::{Error, Result};

pub const TRAIN_PER_CLASS: usize = 923;
pub const VAL_PER_CLASS: usize = 102;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Partition {
    Train,
    Val,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Val => "val",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            other => Err(Error::Parse {
                context: "partition".into(),
                message: format!("expected `train` or `val`, got `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the corpus root, `/`-separated.
    pub path: String,
    pub class_index: usize,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitManifest {
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Fallback splits and skipped files.
    pub warnings: Vec<String>,
}

/// Per-class train/val index lists for a class of `n` items.
///
/// With at least 1,025 items the shuffled order gives 923 train and 102
/// validation items (the rest are unused). Smaller classes fall back to a
/// 90/10 split and return a warning.
pub fn split_class(n: usize, seed: u64, class_index: usize) -> (Vec<usize>, Vec<usize>, Option<String>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class_index as u64);
    order.shuffle(&mut rng);
    if n >= TRAIN_PER_CLASS + VAL_PER_CLASS {
        let val = order[TRAIN_PER_CLASS..TRAIN_PER_CLASS + VAL_PER_CLASS].to_vec();
        order.truncate(TRAIN_PER_CLASS);
        return (order, val, None);
    }
    let n_val = if n < 2 { 0 } else { ((n as f64) * 0.1).round().max(1.0) as usize };
    let val = order.split_off(n - n_val);
    let warning = format!(
        "class {class_index} has {n} images (< {}); using 90/10 fallback: {} train / {} val",
        TRAIN_PER_CLASS + VAL_PER_CLASS,
        order.len(),
        val.len()
    );
    (order, val, Some(warning))
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn decodable(path: &Path) -> bool {
    image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(image::ImageError::from)
        .and_then(|r| r.into_dimensions())
        .is_ok()
}

/// Scans `root/<class>/<image>` and splits every class with `seed`.
pub fn ingest_and_split(root: impl AsRef<Path>, seed: u64) -> Result<SplitManifest> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_dir(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!("no class directories under {}", root.display())));
    }
    let mut manifest = SplitManifest::default();
    for (class_index, dir) in class_dirs.iter().enumerate() {
        let class = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Dataset(format!("class directory {} is not UTF-8", dir.display())))?
            .to_owned();
        let mut files = Vec::new();
        for path in sorted_dir(dir)?.into_iter().filter(|p| p.is_file()) {
            let name = path.file_name().and_then(|n| n.to_str()).map(str::to_owned);
            match name {
                Some(name) if decodable(&path) => files.push(format!("{class}/{name}")),
                _ => {
                    log::warn!("skipping undecodable file {}", path.display());
                    manifest.warnings.push(format!("skipped undecodable file {}", path.display()));
                }
            }
        }
        if files.is_empty() {
            return Err(Error::Dataset(format!("class directory `{class}` has no decodable images")));
        }
        let (train, val, warning) = split_class(files.len(), seed, class_index);
        if let Some(w) = warning {
            log::warn!("{w}");
            manifest.warnings.push(format!("{class}: {w}"));
        }
        for (indices, partition) in [(train, Partition::Train), (val, Partition::Val)] {
            manifest.entries.extend(indices.into_iter().map(|i| ManifestEntry {
                path: files[i].clone(),
                class_index,
                partition,
            }));
        }
        manifest.classes.push(class);
    }
    Ok(manifest)
}

impl SplitManifest {
    pub fn partition(&self, partition: Partition) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.partition == partition)
    }

    /// `(train, val)` counts per class.
    pub fn counts(&self) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); self.classes.len()];
        for e in &self.entries {
            match e.partition {
                Partition::Train => counts[e.class_index].0 += 1,
                Partition::Val => counts[e.class_index].1 += 1,
            }
        }
        counts
    }

    /// Text form: a `#classes` header with tab-separated names, `#warning`
    /// lines, then one `<path>\t<class_index>\t<train|val>` line per image.
    pub fn to_text(&self) -> String {
        let mut out = format!("#classes\t{}\n", self.classes.join("\t"));
        for w in &self.warnings {
            out.push_str(&format!("#warning\t{}\n", w.replace(['\t', '\n'], " ")));
        }
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.path, e.class_index, e.partition));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            context: format!("manifest line {}", line + 1),
            message,
        };
        let mut lines = text.lines().enumerate();
        let classes = match lines.next() {
            Some((_, header)) if header.starts_with("#classes") => {
                header.split('\t').skip(1).map(str::to_owned).collect::<Vec<_>>()
            }
            _ => return Err(err(0, "missing `#classes` header".into())),
        };
        let mut manifest = SplitManifest {
            classes,
            ..Default::default()
        };
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(w) = line.strip_prefix("#warning\t") {
                manifest.warnings.push(w.to_owned());
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, class, partition] = fields[..] else {
                return Err(err(i, format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let class_index: usize = class.parse().map_err(|_| err(i, format!("bad class index `{class}`")))?;
            if class_index >= manifest.classes.len() {
                return Err(err(i, format!("class index {class_index} out of range")));
            }
            manifest.entries.push(ManifestEntry {
                path: path.to_owned(),
                class_index,
                partition: partition.parse()?,
            });
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn full_class_gives_923_and_102() {
        let (train, val, warning) = split_class(1025, 42, 3);
        assert_eq!((train.len(), val.len()), (923, 102));
        assert!(warning.is_none());
        let all: HashSet<_> = train.iter().chain(&val).collect();
        assert_eq!(all.len(), 1025);
    }

    #[test]
    fn small_class_falls_back_to_ninety_ten() {
        let (train, val, warning) = split_class(100, 1, 0);
        assert_eq!((train.len(), val.len()), (90, 10));
        assert!(warning.unwrap().contains("fallback"));
        let (train, val, _) = split_class(1, 1, 0);
        assert_eq!((train.len(), val.len()), (1, 0));
    }

    #[test]
    fn split_depends_on_seed_and_class() {
        assert_eq!(split_class(200, 9, 2), split_class(200, 9, 2));
        assert_ne!(split_class(200, 9, 2).0, split_class(200, 10, 2).0);
        assert_ne!(split_class(200, 9, 2).0, split_class(200, 9, 3).0);
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = SplitManifest {
            classes: vec!["Baroque".into(), "Rococo".into()],
            entries: vec![
                ManifestEntry { path: "Baroque/a.jpg".into(), class_index: 0, partition: Partition::Train },
                ManifestEntry { path: "Rococo/b c.png".into(), class_index: 1, partition: Partition::Val },
            ],
            warnings: vec!["Rococo: small".into()],
        };
        let text = m.to_text();
        assert!(text.starts_with("#classes\tBaroque\tRococo\n"));
        assert!(text.contains("Rococo/b c.png\t1\tval\n"));
        assert_eq!(SplitManifest::from_text(&text).unwrap(), m);
        assert!(SplitManifest::from_text("a\t0\ttrain\n").is_err());
        assert!(SplitManifest::from_text("#classes\tA\nx\t1\ttrain\n").is_err());
        assert!(SplitManifest::from_text("#classes\tA\nx\t0\ttest\n").is_err());
    }
}
