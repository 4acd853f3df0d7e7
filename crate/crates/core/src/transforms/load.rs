use std::path::Path;

use super::preprocess::{preprocess, PreprocConfig};
use crate::data::{read_slice, DatasetManifest, ScanRecord, Slice, Split};
use crate::error::Result;

/// A scan record with its preprocessed slice.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScan {
    pub record: ScanRecord,
    pub slice: Slice,
}

/// Reads and preprocesses every scan of `split`, in manifest order.
pub fn load_split(dir: &Path, manifest: &DatasetManifest, split: Split, config: &PreprocConfig) -> Result<Vec<LoadedScan>> {
    manifest
        .records_in(split)
        .map(|r| {
            let raw = read_slice(&dir.join(&r.slice_path))?;
            Ok(LoadedScan {
                record: r.clone(),
                slice: preprocess(&raw, config)?,
            })
        })
        .collect()
}
