//! Discrete-event simulation of a student-parallel serving cluster.
//!
//! Requests arrive round-robin at nodes, wait in a length-binned buffer, and
//! are served by replicated student groups whose service times come from the
//! analytic perf model. A controller trades students for groups under load.

mod buffer;
mod cluster;
mod controller;
mod engine;
mod metrics;
pub mod presets;
mod workload;

pub use buffer::{bin_of, Binning, BufferElement, LengthAwareBuffer, PushOutcome};
pub use cluster::{
    accuracy_at, allocate_students, service_time, Allocation, ClusterConfig, ControllerConfig, ServingMode, SimPerf,
    StudentSpec,
};
pub use controller::{controller_tick, ControllerAction, ControllerView};
pub use engine::{run_simulation, simulate_requests, SimResult};
pub use metrics::{latency_csv, nearest_rank, window_throughput, RequestRecord, SimMetrics, LATENCY_CSV_HEADER};
pub use workload::{
    generate_workload, parse_trace, phase_boundaries, LengthBucket, LengthDist, PoissonSpec, Request, WorkloadKind,
};

use crate::perf::PerfError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trace line {line}: {msg}")]
    Trace { line: u64, msg: String },
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error("i/o: {0}")]
    Io(String),
}
