//! Binary checkpoint: 16-byte header (magic `STGC`, format version u32,
//! parameter count u64, all little-endian) followed by the flat parameters as
//! little-endian f32.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"STGC";
pub const VERSION: u32 = 1;

pub fn encode(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 16 || bytes[..4] != MAGIC {
        return Err(Error::input("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::input(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * count {
        return Err(Error::shape(
            "checkpoint payload bytes",
            4 * count,
            body.len(),
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect())
}

pub fn save(path: &Path, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode(values)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
