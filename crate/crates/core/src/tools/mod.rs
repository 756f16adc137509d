//! Trace tooling: CSV trace format, workload analysis, synthetic generators,
//! verified replay and the benchmark scenarios behind `smsctl`.

pub mod analyze;
pub mod bench;
pub mod gen;
pub mod replay;
pub mod trace;

pub use analyze::{analyze, cov, AnalyzeOptions, ObjectCov, WorkloadStats};
pub use gen::{generate, GenSpec};
pub use replay::{payload, replay, Percentiles, ReplayError, ReplayOptions, ReplayReport};
pub use trace::{emit, parse_str, parse_trace, write_trace, Op, TraceError, TraceRecord};
