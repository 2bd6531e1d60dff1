//! Single-file container: a little-endian `u32` header length, a UTF-8 JSON
//! header of that many bytes, then a raw binary payload running to the end of
//! the file.

use std::fs;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};

use crate::{Error, Result};

pub fn encode<H: Serialize>(header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::MalformedHeader("header too large".into()))?;
    let mut out = Vec::with_capacity(4 + json.len() + payload.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::MalformedHeader("file shorter than the length prefix".into()));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let json = bytes
        .get(4..4 + len)
        .ok_or_else(|| Error::MalformedHeader("header length exceeds file size".into()))?;
    let header = serde_json::from_slice(json).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    Ok((header, &bytes[4 + len..]))
}

pub fn write<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let bytes = encode(header, payload)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn f64s_to_le(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn le_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
