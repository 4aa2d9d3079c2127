//! Named cluster and workload setups used by the experiments.

use super::cluster::{ClusterConfig, ControllerConfig, ServingMode, SimPerf, StudentSpec};
use super::workload::{LengthDist, PoissonSpec, WorkloadKind};
use super::SimError;
use crate::perf::{reference_factors, PerfModel, REFERENCE_LATENCY_MS};

/// Perf constants with the unit time fitted to the 12-layer reference row.
pub fn calibrated_perf() -> Result<SimPerf, SimError> {
    let mut m = PerfModel::default();
    m.calibrate(&reference_factors(), REFERENCE_LATENCY_MS)?;
    SimPerf::from_model(&m)
}

fn fixed(mut c: ClusterConfig) -> ClusterConfig {
    c.controller.adaptive = false;
    c
}

/// Three 2-layer students per group, length-aware buffer, fixed group size.
pub fn student_parallel() -> ClusterConfig {
    fixed(ClusterConfig::default())
}

/// One 12-layer, 768-wide model per GPU behind a batch-of-10, 10 ms
/// dynamic-batching queue, padding every sample to the maximum length.
pub fn dynamic_batching_baseline() -> ClusterConfig {
    ClusterConfig {
        group_size: 1,
        replicas_per_gpu: 1,
        bin_width: 128,
        num_bins: 1,
        student: StudentSpec { depth: 12, width: 768 },
        serving: ServingMode::WaitingQueue {
            max_batch: 10,
            timeout_ms: 10.0,
        },
        controller: ControllerConfig {
            adaptive: false,
            max_students: 1,
            ..ControllerConfig::default()
        },
        ..ClusterConfig::default()
    }
}

/// Cumulative ablation ladder, fastest first: 2-layer students, then 4-layer
/// students, then padding to the maximum length, then a waiting queue in
/// place of the length-aware buffer.
pub fn ablation_ladder() -> Vec<(&'static str, ClusterConfig)> {
    let two = student_parallel();
    let four = ClusterConfig {
        student: StudentSpec { depth: 4, width: 256 },
        ..two.clone()
    };
    let padded = ClusterConfig {
        bin_width: 128,
        num_bins: 1,
        ..four.clone()
    };
    let queued = ClusterConfig {
        serving: ServingMode::WaitingQueue {
            max_batch: 4,
            timeout_ms: 5.0,
        },
        ..padded.clone()
    };
    vec![
        ("student-parallel-2l", two),
        ("students-4l", four),
        ("with-padding", padded),
        ("with-waiting-queue", queued),
    ]
}

/// Light Poisson load shared by the latency comparisons.
pub fn steady_workload() -> WorkloadKind {
    WorkloadKind::Poisson(PoissonSpec {
        rps: 1000.0,
        duration_ms: 10_000.0,
        lengths: LengthDist::default(),
    })
}

pub const BURST_START_MS: f64 = 3_000.0;
pub const BURST_END_MS: f64 = 5_000.0;

/// Steady load, a 2 s burst at 5× the rate, then steady load again.
pub fn burst_workload() -> WorkloadKind {
    let phase = |rps, duration_ms| PoissonSpec {
        rps,
        duration_ms,
        lengths: LengthDist::default(),
    };
    WorkloadKind::Phases {
        phases: vec![
            phase(3_200.0, BURST_START_MS),
            phase(16_000.0, BURST_END_MS - BURST_START_MS),
            phase(3_200.0, 6_000.0),
        ],
    }
}

/// Adaptive three-student cluster with an idle window scaled to the
/// seconds-long burst workload.
pub fn burst_cluster() -> ClusterConfig {
    ClusterConfig {
        controller: ControllerConfig {
            idle_window_ms: 200.0,
            ..ControllerConfig::default()
        },
        ..ClusterConfig::default()
    }
}

/// [`burst_cluster`] pinned to `k` students.
pub fn burst_cluster_fixed(k: usize) -> ClusterConfig {
    let mut c = fixed(burst_cluster());
    c.group_size = k;
    c
}
