//! Experiment protocols for IVF-TQ against an IVF-PQ baseline: static recall
//! sweeps, streaming ingestion with stale and retrained PQ codebooks, the
//! capacity-vs-bias control and recovery from a rotation shift with
//! partition refresh.

pub mod capacity;
pub mod error;
pub mod preset;
pub mod recovery;
pub mod report;
pub mod static_sweep;
pub mod streaming;

pub use capacity::{run_capacity_vs_bias, CapacityReport};
pub use error::{BenchError, Result};
pub use preset::{DatasetSpec, ExperimentPreset};
pub use recovery::{run_recovery, RecoveryReport};
pub use report::{emit_report, Format, Report};
pub use static_sweep::{run_static, StaticReport};
pub use streaming::{run_streaming, StreamingReport};

use ivftq::eval::recall_at_k;
use ivftq::SearchResult;

pub(crate) fn recall_of(results: Vec<SearchResult>, truth: &[Vec<u64>], k: usize) -> Result<f64> {
    let ids: Vec<Vec<u64>> = results.into_iter().map(|r| r.ids).collect();
    Ok(recall_at_k(&ids, truth, k)?)
}
