//! Dataset ingestion, synthetic category generation, result rendering, and
//! the flat key=value config format.

pub mod config;
pub mod labels;
pub mod manifest;
pub mod ndjson;
pub mod svg;
pub mod synth;

use crate::error::{Error, Result};
use std::path::Path;

/// Atomic file write: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::Io { path: path.display().to_string(), source: e };
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, bytes).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}
