//! Exact cosine-similarity search over L2-normalised embeddings.
//!
//! On disk an index is two files: `<name>.atlr` holding one `index/vectors`
//! tensor (`N×D`, unit rows) and the sidecar `<name>.atlr.json`:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "tap": "pooled",
//!   "dim": 2048,
//!   "count": 2,
//!   "vectors_crc32": 123456789,
//!   "entries": [
//!     {"id": "Baroque/a.jpg", "path": "Baroque/a.jpg", "class": "Baroque", "thumbnail": null}
//!   ]
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::FeatureTable;
use crate::model::Tap;
use crate::tensor::Tensor;
use crate::weights::{checksum, read_archive, WeightArchive};

pub const SIDECAR_VERSION: u32 = 1;
const VECTORS: &str = "index/vectors";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub path: String,
    #[serde(rename = "class")]
    pub class_name: String,
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub rank: usize,
    pub id: String,
    pub path: String,
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(serialize_with = "crate::metrics::fixed4")]
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    tap: Tap,
    dim: usize,
    /// Row-major `N×dim`, each row unit length.
    vectors: Vec<f32>,
    entries: Vec<IndexEntry>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    tap: String,
    dim: usize,
    count: usize,
    vectors_crc32: u32,
    entries: Vec<IndexEntry>,
}

/// `v / ‖v‖` computed in `f64`; `None` for a zero or non-finite vector.
pub fn normalize(v: &[f32]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Sidecar path for an index file: `<path>.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl EmbeddingIndex {
    pub fn new(tap: Tap, dim: usize) -> Self {
        Self {
            tap,
            dim,
            vectors: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn tap(&self) -> Tap {
        self.tap
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.id == id)
    }

    /// Appends a normalised copy of `vector`. Returns `false` (and stores
    /// nothing) for a zero vector.
    pub fn insert(&mut self, entry: IndexEntry, vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "index insert",
                left: vec![vector.len()],
                right: vec![self.dim],
            });
        }
        match normalize(vector) {
            Some(unit) => {
                self.vectors.extend_from_slice(&unit);
                self.entries.push(entry);
                Ok(true)
            }
            None => {
                log::warn!("skipping `{}`: zero or non-finite embedding", entry.id);
                Ok(false)
            }
        }
    }

    /// Exact top-`k` by cosine similarity, descending, ties in insertion
    /// order. `k` is capped at the index size.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if query.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "index search",
                left: vec![query.len()],
                right: vec![self.dim],
            });
        }
        let q = normalize(query).ok_or_else(|| Error::invalid("query vector is zero or non-finite"))?;
        let sims: Vec<f64> = (0..self.len())
            .map(|i| {
                self.vector(i)
                    .iter()
                    .zip(&q)
                    .map(|(&a, &b)| f64::from(a) * f64::from(b))
                    .sum()
            })
            .collect();
        let order = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b));
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let k = k.min(idx.len());
        if k < idx.len() {
            idx.select_nth_unstable_by(k, order);
            idx.truncate(k);
        }
        idx.sort_unstable_by(order);
        Ok(idx
            .into_iter()
            .enumerate()
            .map(|(r, i)| SearchHit {
                rank: r + 1,
                id: self.entries[i].id.clone(),
                path: self.entries[i].path.clone(),
                class_name: self.entries[i].class_name.clone(),
                similarity: sims[i],
            })
            .collect())
    }

    /// Search with a stored item's vector as the query (the item itself ranks first).
    pub fn search_by_id(&self, id: &str, k: usize) -> Result<Vec<SearchHit>> {
        let i = self
            .position(id)
            .ok_or_else(|| Error::UnknownId(id.to_owned()))?;
        self.search(&self.vector(i).to_vec(), k)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.is_empty() {
            return Err(Error::invalid("cannot save an empty index"));
        }
        let mut archive = WeightArchive::new();
        archive.insert(VECTORS, Tensor::new(vec![self.len(), self.dim], self.vectors.clone())?)?;
        archive.write(path)?;
        let sidecar = Sidecar {
            format_version: SIDECAR_VERSION,
            tap: self.tap.name().to_owned(),
            dim: self.dim,
            count: self.len(),
            vectors_crc32: checksum(&self.vectors),
            entries: self.entries.clone(),
        };
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let bad = |message: String| Error::Parse {
            context: format!("index sidecar {}", side.display()),
            message,
        };
        let meta: Sidecar = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if meta.format_version != SIDECAR_VERSION {
            return Err(bad(format!("unsupported format_version {}", meta.format_version)));
        }
        let archive = read_archive(path)?;
        let t = archive.get(VECTORS).ok_or_else(|| Error::MissingSlot(VECTORS.into()))?;
        if t.shape() != [meta.count, meta.dim] || meta.entries.len() != meta.count {
            return Err(bad(format!(
                "vectors {:?} disagree with {} entries of dimension {}",
                t.shape(),
                meta.entries.len(),
                meta.dim
            )));
        }
        if checksum(t.data()) != meta.vectors_crc32 {
            return Err(bad("vectors_crc32 does not match the vector archive".into()));
        }
        Ok(Self {
            tap: meta.tap.parse()?,
            dim: meta.dim,
            vectors: t.data().to_vec(),
            entries: meta.entries,
        })
    }
}

/// Index over every row of a feature table; zero rows are skipped.
pub fn build_index(features: &FeatureTable) -> Result<EmbeddingIndex> {
    if features.is_empty() {
        return Err(Error::invalid("cannot index an empty feature table"));
    }
    let mut index = EmbeddingIndex::new(features.tap, features.dim);
    for row in features.rows() {
        let entry = IndexEntry {
            id: row.id.clone(),
            path: row.id.clone(),
            class_name: features.class_names[row.class_index].clone(),
            thumbnail: None,
        };
        index.insert(entry, &row.embedding)?;
    }
    if index.is_empty() {
        return Err(Error::invalid("every feature row was a zero vector"));
    }
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str) -> IndexEntry {
        IndexEntry {
            id: id.into(),
            path: format!("{id}.png"),
            class_name: "c".into(),
            thumbnail: None,
        }
    }

    fn small() -> EmbeddingIndex {
        let mut ix = EmbeddingIndex::new(Tap::Pooled, 3);
        ix.insert(entry("x"), &[1.0, 0.0, 0.0]).unwrap();
        ix.insert(entry("y"), &[0.0, 2.0, 0.0]).unwrap();
        ix.insert(entry("xy"), &[1.0, 1.0, 0.0]).unwrap();
        ix.insert(entry("x3"), &[3.0, 0.0, 0.0]).unwrap();
        ix
    }

    #[test]
    fn scale_invariant_storage_and_zero_skip() {
        let mut ix = small();
        assert_eq!(ix.vector(0), ix.vector(3));
        assert!(!ix.insert(entry("z"), &[0.0; 3]).unwrap());
        assert_eq!(ix.len(), 4);
    }

    #[test]
    fn self_retrieval_and_ties() {
        let ix = small();
        let hits = ix.search(&[2.0, 0.0, 0.0], 10).unwrap();
        assert_eq!(hits.len(), 4);
        // x and x3 tie at 1.0; insertion order decides.
        assert_eq!(hits[0].id, "x");
        assert_eq!(hits[1].id, "x3");
        assert!((hits[0].similarity - 1.0).abs() < 1e-6);
        assert!((hits[2].similarity - 0.5f64.sqrt()).abs() < 1e-6);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
    }

    #[test]
    fn orthogonal_query() {
        let hits = small().search(&[0.0, 0.0, 5.0], 2).unwrap();
        assert!(hits.iter().all(|h| h.similarity.abs() < 1e-6));
    }

    #[test]
    fn rejects_bad_queries() {
        let ix = small();
        assert!(ix.search(&[0.0; 3], 1).is_err());
        assert!(ix.search(&[1.0; 2], 1).is_err());
        assert!(ix.search(&[1.0; 3], 0).is_err());
        assert!(ix.search_by_id("nope", 1).is_err());
        assert_eq!(ix.search_by_id("y", 1).unwrap()[0].id, "y");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ix.atlr");
        let ix = small();
        ix.save(&path).unwrap();
        assert!(dir.path().join("ix.atlr.json").exists());
        assert_eq!(EmbeddingIndex::load(&path).unwrap(), ix);
        fs::remove_file(sidecar_path(&path)).unwrap();
        let err = EmbeddingIndex::load(&path).unwrap_err().to_string();
        assert!(err.contains("ix.atlr.json"), "{err}");
    }
}
