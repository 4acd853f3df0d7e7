//! Fingerprints, exact and inverted-file search, and index files.

mod fingerprint;
mod index;
mod persist;

pub use fingerprint::{fingerprint, fingerprints, normalize, Fingerprint};
pub use index::{default_cells, FingerprintIndex, Hit, Ivf, DEFAULT_KMEANS_ITERS};
pub use persist::{decode_index, encode_index, load_index, save_index, INDEX_MAGIC};
