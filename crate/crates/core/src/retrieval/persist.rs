//! `DBPIDX1` index files.

use std::path::Path;

use super::fingerprint::Fingerprint;
use super::index::{FingerprintIndex, Ivf};
use crate::error::{Error, Result};
use crate::nn::params::Reader;

pub const INDEX_MAGIC: &[u8; 7] = b"DBPIDX1";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn bad(reason: impl Into<String>) -> Error {
    Error::format("DBPIDX1", reason)
}

pub fn encode_index(index: &FingerprintIndex) -> Result<Vec<u8>> {
    if index.is_empty() {
        return Err(Error::invalid("refusing to save an empty index"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut out, index.dim);
    put_u32(&mut out, index.len());
    for e in &index.entries {
        put_str(&mut out, &e.scan_id);
        put_str(&mut out, &e.subject_id);
        put_f32s(&mut out, &e.vector);
    }
    match &index.ivf {
        None => out.push(0),
        Some(ivf) => {
            out.push(1);
            put_u32(&mut out, ivf.n_cells());
            put_f32s(&mut out, &ivf.centroids);
            for cell in &ivf.cells {
                put_u32(&mut out, cell.len());
                for &i in cell {
                    put_u32(&mut out, i as usize);
                }
            }
        }
    }
    Ok(out)
}

fn read_str(r: &mut Reader<'_>) -> Result<String> {
    let n = r.u32()? as usize;
    String::from_utf8(r.take(n)?.to_vec()).map_err(|_| bad("string is not UTF-8"))
}

fn read_f32s(r: &mut Reader<'_>, n: usize) -> Result<Vec<f32>> {
    (0..n).map(|_| r.f32()).collect()
}

pub fn decode_index(bytes: &[u8]) -> Result<FingerprintIndex> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(7).map_err(|_| bad("truncated header"))? != INDEX_MAGIC {
        return Err(bad("bad magic"));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    if count == 0 || dim == 0 {
        return Err(bad("empty index"));
    }
    let mut entries = Vec::new();
    for _ in 0..count {
        let scan_id = read_str(&mut r)?;
        let subject_id = read_str(&mut r)?;
        let vector = read_f32s(&mut r, dim)?;
        entries.push(Fingerprint {
            scan_id,
            subject_id,
            vector,
        });
    }
    let mut index = FingerprintIndex::build_exact(entries).map_err(|e| bad(e.to_string()))?;
    match r.u8()? {
        0 => {}
        1 => {
            let n_cells = r.u32()? as usize;
            if n_cells == 0 || n_cells > count {
                return Err(bad(format!("{n_cells} cells for {count} entries")));
            }
            let centroids = read_f32s(&mut r, n_cells * dim)?;
            let mut seen = vec![false; count];
            let mut cells = Vec::with_capacity(n_cells);
            for _ in 0..n_cells {
                let len = r.u32()? as usize;
                let cell = (0..len).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?;
                for &i in &cell {
                    let slot = seen.get_mut(i as usize).ok_or_else(|| bad("assignment out of range"))?;
                    if std::mem::replace(slot, true) {
                        return Err(bad("entry assigned to two cells"));
                    }
                }
                cells.push(cell);
            }
            if seen.contains(&false) {
                return Err(bad("unassigned entries"));
            }
            index.ivf = Some(Ivf { centroids, cells });
        }
        f => return Err(bad(format!("ivf flag {f}"))),
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(index)
}

pub fn save_index(index: &FingerprintIndex, path: &Path) -> Result<()> {
    let bytes = encode_index(index)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<FingerprintIndex> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&bytes)
}
