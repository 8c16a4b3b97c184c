use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FFNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Serializes `model`: magic, version, JSON layer manifest, then the
/// parameter blob as little-endian `f64`.
pub fn write_checkpoint(model: &impl Parameterized) -> Result<Vec<u8>> {
    let manifest = serde_json::to_vec(&model.manifest())?;
    let params = model.flatten();
    let mut out = Vec::with_capacity(20 + manifest.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

/// Loads parameters into `model`, whose layer manifest must match.
pub fn read_checkpoint(mut bytes: &[u8], model: &mut impl Parameterized) -> Result<()> {
    let b = &mut bytes;
    if take(b, 4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mlen = u32::from_le_bytes(take(b, 4)?.try_into().expect("4 bytes")) as usize;
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(take(b, mlen)?)?;
    if manifest != model.manifest() {
        return Err(Error::Format("layer manifest does not match the model".into()));
    }
    let count = u64::from_le_bytes(take(b, 8)?.try_into().expect("8 bytes")) as usize;
    let blob = take(b, 8 * count)?;
    if !b.is_empty() {
        return Err(Error::Format("trailing bytes after parameter blob".into()));
    }
    let params: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    model.load_flat(&params)
}

pub fn save_checkpoint(path: &Path, model: &impl Parameterized) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, model: &mut impl Parameterized) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, model)
}
