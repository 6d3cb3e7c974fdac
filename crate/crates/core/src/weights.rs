//! The `.atlr` named-tensor archive.
//!
//! All integers are little-endian:
//!
//! ```text
//! "ATLR" | u32 version (=1) | u32 entry count
//! per entry:
//!   u16 name length | name (UTF-8) | u8 dtype (0 = f32) | u8 rank
//!   rank × u32 dims | u32 CRC32 of payload | payload (f32 LE, 4·∏dims bytes)
//! ```
//!
//! Weights, feature tables, trained heads, index vectors and parity fixtures
//! all travel in this format.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ATLR";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {0:?}, expected \"ATLR\"")]
    BadMagic([u8; 4]),
    #[error("unsupported archive version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated archive while reading {0}")]
    Truncated(String),
    #[error("entry `{entry}`: unsupported dtype code {code}")]
    UnsupportedDtype { entry: String, code: u8 },
    #[error("entry `{entry}`: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch {
        entry: String,
        stored: u32,
        computed: u32,
    },
    #[error("duplicate entry name `{0}`")]
    DuplicateName(String),
    #[error("entry `{entry}`: {reason}")]
    InvalidEntry { entry: String, reason: String },
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub name: String,
    pub tensor: Tensor,
    pub checksum: u32,
}

/// Ordered, uniquely named collection of `f32` tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightArchive {
    entries: Vec<ArchiveEntry>,
    index: HashMap<String, usize>,
}

pub fn payload_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn checksum(data: &[f32]) -> u32 {
    crc32fast::hash(&payload_bytes(data))
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u32 {
        FORMAT_VERSION
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Appends a new entry; the name must not already be present.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), ArchiveError> {
        let name = name.into();
        validate_name(&name)?;
        if self.index.contains_key(&name) {
            return Err(ArchiveError::DuplicateName(name));
        }
        if tensor.rank() > usize::from(u8::MAX) || tensor.shape().iter().any(|&d| d > u32::MAX as usize) {
            return Err(ArchiveError::InvalidEntry {
                entry: name,
                reason: format!("shape {:?} not representable", tensor.shape()),
            });
        }
        let checksum = checksum(tensor.data());
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ArchiveEntry {
            name,
            tensor,
            checksum,
        });
        Ok(())
    }

    /// Inserts or overwrites, keeping the original position of an existing name.
    pub fn set(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<(), ArchiveError> {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => {
                let checksum = checksum(tensor.data());
                self.entries[i] = ArchiveEntry {
                    name,
                    tensor,
                    checksum,
                };
                Ok(())
            }
            None => self.insert(name, tensor),
        }
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        let i = self.index.remove(name)?;
        let entry = self.entries.remove(i);
        for v in self.index.values_mut() {
            if *v > i {
                *v -= 1;
            }
        }
        Some(entry.tensor)
    }

    /// CRC32 over every entry's name and payload checksum, in order.
    pub fn digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for e in &self.entries {
            h.update(e.name.as_bytes());
            h.update(&e.checksum.to_le_bytes());
        }
        h.finalize()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(e.tensor.rank() as u8);
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            out.extend_from_slice(&e.checksum.to_le_bytes());
            out.extend_from_slice(&payload_bytes(e.tensor.data()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "header")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(ArchiveError::BadMagic(magic));
        }
        let version = r.u32("header")?;
        if version != FORMAT_VERSION {
            return Err(ArchiveError::UnsupportedVersion(version));
        }
        let count = r.u32("header")?;
        let mut archive = WeightArchive::new();
        for i in 0..count {
            let ctx = format!("entry #{i} name");
            let len = usize::from(r.u16(&ctx)?);
            let name = std::str::from_utf8(r.take(len, &ctx)?)
                .map_err(|_| ArchiveError::InvalidEntry {
                    entry: format!("#{i}"),
                    reason: "name is not valid UTF-8".into(),
                })?
                .to_owned();
            let ctx = format!("entry `{name}`");
            let dtype = r.u8(&ctx)?;
            if dtype != DTYPE_F32 {
                return Err(ArchiveError::UnsupportedDtype { entry: name, code: dtype });
            }
            let rank = usize::from(r.u8(&ctx)?);
            let shape = (0..rank)
                .map(|_| r.u32(&ctx).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let stored = r.u32(&ctx)?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| ArchiveError::InvalidEntry {
                    entry: name.clone(),
                    reason: format!("shape {shape:?} overflows"),
                })?;
            let payload = r.take(n, &ctx)?;
            let computed = crc32fast::hash(payload);
            if computed != stored {
                return Err(ArchiveError::ChecksumMismatch {
                    entry: name,
                    stored,
                    computed,
                });
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| ArchiveError::InvalidEntry {
                entry: name.clone(),
                reason: e.to_string(),
            })?;
            archive.insert(name, tensor)?;
        }
        if r.pos != bytes.len() {
            return Err(ArchiveError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(archive)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ArchiveError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| ArchiveError::Io {
            path: path.to_owned(),
            source,
        })
    }
}

fn validate_name(name: &str) -> Result<(), ArchiveError> {
    if name.is_empty() || name.len() > usize::from(u16::MAX) {
        return Err(ArchiveError::InvalidEntry {
            entry: name.chars().take(64).collect(),
            reason: "name must be 1..=65535 bytes".into(),
        });
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8], ArchiveError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| ArchiveError::Truncated(ctx.to_owned()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, ctx: &str) -> Result<u8, ArchiveError> {
        Ok(self.take(1, ctx)?[0])
    }

    fn u16(&mut self, ctx: &str) -> Result<u16, ArchiveError> {
        Ok(u16::from_le_bytes(self.take(2, ctx)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32, ArchiveError> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().expect("4 bytes")))
    }
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<WeightArchive, ArchiveError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.to_owned(),
        source,
    })?;
    WeightArchive::from_bytes(&bytes)
}

/// One slot a model expects to find in an archive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl SlotSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SlotStatus {
    Present,
    Missing,
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub slots: BTreeMap<String, SlotStatus>,
    /// Archive entries the manifest does not mention.
    pub unexpected: Vec<String>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn missing(&self) -> Vec<&str> {
        self.filter(|s| matches!(s, SlotStatus::Missing))
    }

    pub fn mismatched(&self) -> Vec<&str> {
        self.filter(|s| matches!(s, SlotStatus::ShapeMismatch { .. }))
    }

    fn filter(&self, pred: impl Fn(&SlotStatus) -> bool) -> Vec<&str> {
        self.slots
            .iter()
            .filter(|(_, s)| pred(s))
            .map(|(n, _)| n.as_str())
            .collect()
    }
}

/// Checks `archive` against the slots a model expects. Extra entries are
/// listed but do not fail verification.
pub fn verify(archive: &WeightArchive, manifest: &[SlotSpec]) -> VerifyReport {
    let slots: BTreeMap<_, _> = manifest
        .iter()
        .map(|slot| {
            let status = match archive.get(&slot.name) {
                None => SlotStatus::Missing,
                Some(t) if t.shape() != slot.shape.as_slice() => SlotStatus::ShapeMismatch {
                    expected: slot.shape.clone(),
                    actual: t.shape().to_vec(),
                },
                Some(_) => SlotStatus::Present,
            };
            (slot.name.clone(), status)
        })
        .collect();
    let mut unexpected: Vec<String> = archive
        .names()
        .filter(|n| !slots.contains_key(*n))
        .map(str::to_owned)
        .collect();
    unexpected.sort();
    let pass = slots.values().all(|s| *s == SlotStatus::Present);
    VerifyReport {
        slots,
        unexpected,
        pass,
    }
}

pub fn verify_archive(path: impl AsRef<Path>, manifest: &[SlotSpec]) -> Result<VerifyReport, ArchiveError> {
    Ok(verify(&read_archive(path)?, manifest))
}
