//! Small filesystem helpers: raw little-endian tensor files and JSON manifests.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes `bytes` via a temporary sibling and a rename, so readers never
/// observe a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::persistence(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::persistence(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::persistence(path, e))
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::persistence(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::persistence(path, e))?;
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::persistence(path, e))
}

/// Stores values as little-endian `f32`.
pub(crate) fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub(crate) fn read_f32(path: &Path, expected_len: usize) -> Result<Vec<f64>> {
    let bytes = read(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::persistence(
            path,
            format!("expected {} bytes, found {}", expected_len * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect())
}

pub(crate) fn write_u32(path: &Path, values: &[usize]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub(crate) fn read_u32(path: &Path, expected_len: usize) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::persistence(
            path,
            format!("expected {} bytes, found {}", expected_len * 4, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect())
}
