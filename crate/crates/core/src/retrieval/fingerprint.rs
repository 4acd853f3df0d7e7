use serde::{Deserialize, Serialize};

use crate::data::Slice;
use crate::error::{Error, Result};
use crate::nn::{represent_refs, ParamStore};

/// Unit-norm encoder representation of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub scan_id: String,
    pub subject_id: String,
    pub vector: Vec<f32>,
}

/// L2-normalizes `raw` (norm computed in f64).
pub fn normalize(raw: &[f32]) -> Result<Vec<f32>> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("representation".into()));
    }
    let n = raw.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::invalid("cannot normalize a zero representation"));
    }
    Ok(raw.iter().map(|&v| (v as f64 / n) as f32).collect())
}

impl Fingerprint {
    pub fn new(scan_id: impl Into<String>, subject_id: impl Into<String>, raw: &[f32]) -> Result<Self> {
        Ok(Self {
            scan_id: scan_id.into(),
            subject_id: subject_id.into(),
            vector: normalize(raw)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Inference-mode fingerprints for preprocessed slices. The projection
/// head is never evaluated.
pub fn fingerprints<'a>(
    store: &ParamStore,
    items: impl IntoIterator<Item = (&'a str, &'a str, &'a Slice)>,
) -> Result<Vec<Fingerprint>> {
    let items: Vec<_> = items.into_iter().collect();
    let slices: Vec<&Slice> = items.iter().map(|&(_, _, s)| s).collect();
    let reps = represent_refs(store, &slices)?;
    items
        .iter()
        .enumerate()
        .map(|(i, &(scan, subject, _))| Fingerprint::new(scan, subject, reps.row(i)))
        .collect()
}

pub fn fingerprint(store: &ParamStore, scan_id: &str, subject_id: &str, slice: &Slice) -> Result<Fingerprint> {
    Ok(fingerprints(store, [(scan_id, subject_id, slice)])?.remove(0))
}
