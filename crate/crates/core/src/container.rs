//! Binary container shared by ATF sets, filter banks and generator checkpoints.
//!
//! Layout: one line of JSON header terminated by `\n`, followed by
//! little-endian `f64` values. The header must carry a `count` field with the
//! number of values that follow.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{PszError, Result};

pub(crate) fn encode<H: Serialize>(header: &H, values: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_string(header)
        .map_err(|e| PszError::CorruptContainer(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(json.len() + 1 + 8 * values.len());
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Splits a container into its header and payload. Errors are reported as plain strings so each
/// caller can wrap them in its own error kind.
pub(crate) fn decode<H: DeserializeOwned>(bytes: &[u8], count_of: impl Fn(&H) -> usize) -> std::result::Result<(H, Vec<f64>), String> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| "missing header terminator".to_string())?;
    let header: H = serde_json::from_slice(&bytes[..nl]).map_err(|e| format!("bad header: {e}"))?;
    let payload = &bytes[nl + 1..];
    let count = count_of(&header);
    if payload.len() != 8 * count {
        return Err(format!(
            "payload holds {} bytes, header announces {} values",
            payload.len(),
            count
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, values))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| PszError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| PszError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| PszError::io(path, e))
}
