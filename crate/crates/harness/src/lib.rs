//! Trace replay, synthetic workloads and a lazy B-tree baseline for
//! benchmarking and cross-checking the rask index.

pub mod baseline;
pub mod error;
pub mod histogram;
pub mod replay;
pub mod trace;
pub mod workload;

pub use baseline::LazyBaseline;
pub use error::HarnessError;
pub use histogram::{Histogram, LatencySummary};
pub use replay::{
    check_equivalence, compare, replay, value_for, Baseline, BenchOptions, Divergence, Equivalence, OpCounts,
    RaskTarget, ReplayOptions, Report, SystemMetrics, Target, WorkloadInfo,
};
pub use trace::{parse_trace, write_trace, Columns, OpKind, TraceReader, TraceRecord};
pub use workload::{generate, LengthDist, Skew, WorkloadSpec};
