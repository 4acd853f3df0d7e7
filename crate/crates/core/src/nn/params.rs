//! Named parameter storage and the `DBPCKPT1` checkpoint format.
//!
//! Layout: 8-byte magic `DBPCKPT1`, u32 entry count, then per entry a
//! u32-length-prefixed UTF-8 name, u8 rank, rank × u32 dims, u8 flags
//! (bit0 bias/norm, bit1 frozen) and the f32 values. Integers and floats are
//! little-endian. An entry whose name starts with `#` is a comment record
//! (rank 1, zero length); the text after `#` carries the effective run
//! config.

use std::path::Path;

use indexmap::IndexMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DBPCKPT1";

const FLAG_BIAS_OR_NORM: u8 = 1;
const FLAG_FROZEN: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    /// Biases and normalization parameters/statistics; these use the bias
    /// learning rate and skip LARS trust scaling.
    pub is_bias_or_norm: bool,
    pub frozen: bool,
}

/// Ordered name → tensor map shared by both Siamese branches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: IndexMap<String, ParamEntry>,
    comment: Option<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, is_bias_or_norm: bool) -> Result<()> {
        let name = name.into();
        if name.starts_with('#') {
            return Err(Error::invalid(format!("parameter names may not start with '#': {name}")));
        }
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        self.entries.insert(
            name,
            ParamEntry {
                value,
                is_bias_or_norm,
                frozen: false,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::NotFound(format!("parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn comment(&self) -> Option<&str> {
        self.comment.as_deref()
    }

    pub fn set_comment(&mut self, comment: Option<String>) {
        self.comment = comment;
    }

    /// Marks every entry whose name starts with `prefix` as frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, e) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                e.frozen = true;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.all_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let count = self.entries.len() + usize::from(self.comment.is_some());
        out.extend_from_slice(&(count as u32).to_le_bytes());
        let write_name = |out: &mut Vec<u8>, name: &str| {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        };
        if let Some(c) = &self.comment {
            write_name(&mut out, &format!("#{c}"));
            out.push(1);
            out.extend_from_slice(&0u32.to_le_bytes());
            out.push(0);
        }
        for (name, e) in &self.entries {
            write_name(&mut out, name);
            out.push(e.value.shape().len() as u8);
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            let mut flags = 0;
            if e.is_bias_or_norm {
                flags |= FLAG_BIAS_OR_NORM;
            }
            if e.frozen {
                flags |= FLAG_FROZEN;
            }
            out.push(flags);
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format("DBPCKPT1", "bad magic"));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("DBPCKPT1", "entry name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let flags = r.u8()?;
            let n: usize = shape.iter().product();
            let values: Vec<f32> = r
                .take(n.checked_mul(4).ok_or_else(|| Error::format("DBPCKPT1", "size overflow"))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if let Some(text) = name.strip_prefix('#') {
                if store.comment.is_some() || n != 0 {
                    return Err(Error::format("DBPCKPT1", "malformed comment record"));
                }
                store.comment = Some(text.to_string());
                continue;
            }
            store
                .insert(name.clone(), Tensor::new(shape, values)?, flags & FLAG_BIAS_OR_NORM != 0)
                .map_err(|e| Error::format("DBPCKPT1", e.to_string()))?;
            store.entries[&name].frozen = flags & FLAG_FROZEN != 0;
        }
        if r.pos != bytes.len() {
            return Err(Error::format("DBPCKPT1", "trailing bytes"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Little-endian cursor used by the binary formats.
pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("binary", "truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
