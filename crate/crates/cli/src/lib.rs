//! Command-line tools and HTTP service on top of `atelier-core`.
//!
//! The [`engine::Engine`] snapshot is shared by both front ends, so the CLI
//! and the service return byte-identical JSON for the same inputs.

pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod server;

pub use error::{CliError, Result};
