//! Low-level persistence: little-endian f64 blocks, SHA-256 checksums and
//! atomic (write-then-rename) file replacement.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn f64_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f64(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Replaces `path` with `bytes` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline; serde_json prints floats in shortest
/// round-trip form, so save-load-save is byte-identical.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serialisable value");
    bytes.push(b'\n');
    bytes
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// Reads a file and checks it against an expected SHA-256 digest.
pub fn read_verified(path: &Path, sha256: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Integrity { path: path.to_path_buf(), reason: "missing file".into() },
        _ => Error::io(path, e),
    })?;
    let actual = sha256_hex(&bytes);
    if actual != sha256 {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            reason: format!("checksum mismatch: expected {sha256}, found {actual}"),
        });
    }
    Ok(bytes)
}

/// Reference to a binary block, relative to a store root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRef {
    pub file: String,
    pub len: usize,
    pub sha256: String,
}

pub fn write_block(root: &Path, file: &str, values: &[f64]) -> Result<BlockRef> {
    let bytes = f64_to_bytes(values);
    let sha256 = sha256_hex(&bytes);
    write_atomic(&root.join(file), &bytes)?;
    Ok(BlockRef { file: file.to_string(), len: values.len(), sha256 })
}

pub fn read_block(root: &Path, block: &BlockRef) -> Result<Vec<f64>> {
    let path = root.join(&block.file);
    let values = bytes_to_f64(&read_verified(&path, &block.sha256)?, &path)?;
    if values.len() != block.len {
        return Err(Error::Integrity {
            path,
            reason: format!("expected {} values, found {}", block.len, values.len()),
        });
    }
    Ok(values)
}
