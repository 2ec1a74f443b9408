//! Checkpoint serialisation for parameter sets.
//!
//! Layout: an 8-byte magic, a little-endian u64 manifest length, a JSON
//! manifest listing every parameter's name, shape and byte offset, then one
//! contiguous blob of little-endian f64 values. f64 bits survive the round
//! trip unchanged, so save followed by load is bit-exact. Writes go through a
//! sibling temp file and an atomic rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::numerics::params::ParamSet;
use crate::numerics::tape::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"SPRIGCK1";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    /// [n] for vectors, [rows, cols] for matrices.
    shape: Vec<usize>,
    /// Byte offset of this entry's values inside the data blob.
    offset: u64,
    /// Number of f64 values.
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    entries: Vec<ManifestEntry>,
}

/// Writes a parameter set to `path`.
pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut blob: Vec<u8> = Vec::with_capacity(params.value_count() * 8);
    for p in params.iter() {
        let shape = match p.tensor.shape {
            Shape::Vector(n) => vec![n],
            Shape::Matrix(r, c) => vec![r, c],
        };
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape,
            offset: blob.len() as u64,
            len: p.tensor.len() as u64,
        });
        for v in &p.tensor.values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest { entries })
        .map_err(|e| CoreError::numeric(format!("manifest encoding failed: {e}")))?;

    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = parent.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "ckpt".into())
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&(manifest.len() as u64).to_le_bytes())?;
        f.write_all(&manifest)?;
        f.write_all(&blob)?;
        f.sync_all()?;
        Ok(())
    };
    write().map_err(|e| CoreError::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    Ok(())
}

/// Loads a parameter set from `path`.
pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path.display().to_string(), e))?;
    let fail = |msg: String| CoreError::Parse { path: path.display().to_string(), line: 0, message: msg };

    if bytes.len() < MAGIC.len() + 8 {
        return Err(fail("file too short for checkpoint header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(fail("bad checkpoint magic".into()));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest_end = 16 + mlen;
    if bytes.len() < manifest_end {
        return Err(fail("truncated checkpoint manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])
        .map_err(|e| fail(format!("manifest decode failed: {e}")))?;
    let blob = &bytes[manifest_end..];

    let mut params = ParamSet::new();
    for entry in manifest.entries {
        let start = entry.offset as usize;
        let end = start + entry.len as usize * 8;
        if end > blob.len() {
            return Err(fail(format!("entry {} points outside the data blob", entry.name)));
        }
        let values: Vec<f64> = blob[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = match entry.shape.as_slice() {
            [n] => {
                if *n != values.len() {
                    return Err(fail(format!("entry {} shape/len mismatch", entry.name)));
                }
                Tensor { shape: Shape::Vector(*n), values, requires_grad: false, grad: None }
            }
            [r, c] => {
                if r * c != values.len() {
                    return Err(fail(format!("entry {} shape/len mismatch", entry.name)));
                }
                Tensor { shape: Shape::Matrix(*r, *c), values, requires_grad: false, grad: None }
            }
            other => return Err(fail(format!("entry {} has unsupported rank {}", entry.name, other.len()))),
        };
        params.insert(entry.name, tensor)?;
    }
    Ok(params)
}
