//! `DBPIMG1` slice files: 7-byte magic, u32 LE height, u32 LE width, then
//! height*width f32 LE values, row-major.

use std::path::Path;

use super::slice::Slice;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: &[u8; 7] = b"DBPIMG1";

pub fn encode_slice(slice: &Slice) -> Vec<u8> {
    let mut out = Vec::with_capacity(15 + 4 * slice.values().len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(slice.height() as u32).to_le_bytes());
    out.extend_from_slice(&(slice.width() as u32).to_le_bytes());
    for v in slice.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_slice(bytes: &[u8]) -> Result<Slice> {
    const KIND: &str = "DBPIMG1";
    if bytes.len() < 15 {
        return Err(Error::format(KIND, "truncated header"));
    }
    if &bytes[..7] != IMAGE_MAGIC {
        return Err(Error::format(KIND, "bad magic"));
    }
    let height = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    let body = &bytes[15..];
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(KIND, "dimensions overflow"))?;
    if body.len() != expected {
        return Err(Error::format(
            KIND,
            format!("expected {expected} payload bytes, found {}", body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Slice::new(height, width, values)
}

pub fn write_slice(path: &Path, slice: &Slice) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_slice(slice)).map_err(|e| Error::io(path, e))
}

pub fn read_slice(path: &Path) -> Result<Slice> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_slice(&bytes)
}
