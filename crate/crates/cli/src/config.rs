//! Flat `key = value` service configuration.
//!
//! ```text
//! # atelier.conf
//! weights = artifacts/resnet50v2.atlr
//! head = artifacts/head.atlr
//! index = artifacts/index.atlr
//! classes = artifacts/classes.txt
//! images = /data/wikiart
//! bind = 127.0.0.1:8080
//! max_upload_bytes = 16777216
//! workers = 4
//! ```
//!
//! Relative paths resolve against the directory holding the file. Blank lines
//! and lines starting with `#` are ignored.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const CONFIG_ENV: &str = "ATELIER_CONFIG";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub weights: Option<PathBuf>,
    pub head: Option<PathBuf>,
    pub index: Option<PathBuf>,
    /// One class name per line, in class-index order.
    pub classes: Option<PathBuf>,
    /// Root that index entry paths are relative to.
    pub images: Option<PathBuf>,
    pub bind: SocketAddr,
    pub max_upload_bytes: usize,
    pub workers: Option<usize>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            weights: None,
            head: None,
            index: None,
            classes: None,
            images: None,
            bind: DEFAULT_BIND.parse().expect("default bind address"),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            workers: None,
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = ServiceConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| CliError::Config {
                path: path.to_owned(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let file = || Some(base.join(value));
            match key {
                "weights" => cfg.weights = file(),
                "head" => cfg.head = file(),
                "index" => cfg.index = file(),
                "classes" => cfg.classes = file(),
                "images" => cfg.images = file(),
                "bind" => cfg.bind = value.parse().map_err(|e| err(format!("bind `{value}`: {e}")))?,
                "max_upload_bytes" => {
                    cfg.max_upload_bytes = value
                        .parse()
                        .ok()
                        .filter(|&n| n > 0)
                        .ok_or_else(|| err(format!("max_upload_bytes must be a positive integer, got `{value}`")))?
                }
                "workers" => {
                    cfg.workers = Some(
                        value
                            .parse()
                            .ok()
                            .filter(|&n| n > 0)
                            .ok_or_else(|| err(format!("workers must be a positive integer, got `{value}`")))?,
                    )
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// The file named by `ATELIER_CONFIG`, or defaults when it is unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(path) => Self::load(PathBuf::from(path)),
            None => Ok(Self::default()),
        }
    }

    /// Every configured file must exist.
    pub fn check_files(&self) -> Result<()> {
        let files = [
            ("weights", &self.weights),
            ("head", &self.head),
            ("index", &self.index),
            ("classes", &self.classes),
        ];
        for (key, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(CliError::InvalidConfig(format!("{key} file {} does not exist", p.display())));
                }
            }
        }
        if let Some(dir) = &self.images {
            if !dir.is_dir() {
                return Err(CliError::InvalidConfig(format!("images directory {} does not exist", dir.display())));
            }
        }
        if self.weights.is_none() {
            return Err(CliError::InvalidConfig("no weights file configured".into()));
        }
        Ok(())
    }
}
