//! Learn linear-inequality constraint systems from valid/invalid examples and
//! apply them in exact integer programming and constrained sequence decoding.
//!
//! The toolkit trains a two-layer rectifier network on feature vectors of
//! valid and invalid structures, rewrites the trained network as an explicit
//! system of linear inequalities, and enforces those inequalities inside an
//! exact branch-and-bound solver for binary integer programs and a beam-search
//! decoder for tagging tasks.

pub mod corpus;
pub mod er_tables;
pub mod error;
pub mod extraction;
pub mod features;
pub mod ilp;
pub mod rectifier;
pub mod sequence;
pub mod synthetic;

pub mod cli;

pub use error::{Error, Result};

use std::path::Path;

/// Write `content` to `path` atomically: the data lands in a sibling
/// temporary file first and is renamed into place, so a killed process never
/// leaves a truncated artifact under the final name.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParameter(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
