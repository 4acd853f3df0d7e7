//! Retrieval metrics, the leave-one-out protocol and paired significance
//! testing.

mod metrics;
mod protocol;
mod ttest;

pub use metrics::{ap_at_r, hit_at_k, map_at_r, mean, recall_at_k};
pub use protocol::{evaluate, evaluate_fingerprints, summary_table, EvalReport, QueryResult, Timing, DEFAULT_K};
pub use ttest::{paired_t_test, TTest};
