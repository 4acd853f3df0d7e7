//! Domain types, manifests and the procedural phantom dataset generator.

mod dataset;
mod image_file;
mod manifest;
mod phantom;
mod slice;

pub use dataset::{
    assign_splits, derive_synt_contr, generate_dataset, ContrastChange, DatasetSpec, SplitPolicy,
};
pub use image_file::{decode_slice, encode_slice, read_slice, write_slice, IMAGE_MAGIC};
pub use manifest::{DatasetManifest, ScanRecord, Split, MANIFEST_FILE};
pub use phantom::{generate_subject, render_scan, Acquisition, SubjectPhenotype, PHANTOM_REF_SIZE};
pub use slice::{Slice, MIN_SCAN_SIDE};

/// Minimum spacing between consecutive scans of one subject, in days.
pub const MIN_DAY_GAP: i64 = 180;
