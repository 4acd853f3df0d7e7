//! Brain-slice fingerprinting.
//!
//! Trains a small convolutional encoder on 2D brain slices with a mix of a
//! redundancy-reduction objective (two distorted views of each slice) and a
//! triplet InfoNCE objective (same-subject positives), then uses the
//! L2-normalized encoder output as a fingerprint for same-subject retrieval.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`data`]: slices, manifests, subject-disjoint splits and the procedural
//!   phantom generator used in place of real scans.
//! - [`transforms`]: preprocessing and the stochastic distortion suite.
//! - [`nn`]: a small reverse-mode autodiff tape, the encoder/projector and
//!   Grad-CAM saliency.
//! - [`training`]: losses, weighting schedules, mining, batch sampling, LARS
//!   and the training loop.
//! - [`retrieval`]: fingerprints plus exact and inverted-file search.
//! - [`eval`]: retrieval metrics, the evaluation protocol and paired t-tests.
//! - [`bench`]: the seeded loss/schedule ablation benchmark.

pub mod bench;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod retrieval;
pub mod seed;
pub mod training;
pub mod transforms;

pub use error::{Error, Result};
