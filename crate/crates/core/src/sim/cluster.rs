use serde::{Deserialize, Serialize};

use super::buffer::{Binning, BufferElement};
use super::SimError;
use crate::distill::AccuracyTable;
use crate::perf::{
    PerfFactors, PerfModel, WaitModel, DEFAULT_CAPACITY, DEFAULT_GATHER_MS, DEFAULT_PCIE_TOKENS_PER_MS,
};

/// Shape of one student as the perf model sees it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentSpec {
    pub depth: usize,
    pub width: usize,
}

impl Default for StudentSpec {
    fn default() -> Self {
        StudentSpec { depth: 2, width: 256 }
    }
}

/// Hardware constants of the perf model plus its calibrated unit time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPerf {
    pub t_unit_ms: f64,
    #[serde(default = "default_capacity")]
    pub capacity: f64,
    #[serde(default = "default_pcie")]
    pub pcie_t: f64,
    #[serde(default = "default_gather")]
    pub gather_ms: f64,
}

fn default_capacity() -> f64 {
    DEFAULT_CAPACITY
}
fn default_pcie() -> f64 {
    DEFAULT_PCIE_TOKENS_PER_MS
}
fn default_gather() -> f64 {
    DEFAULT_GATHER_MS
}

impl SimPerf {
    pub fn from_model(model: &PerfModel) -> Result<Self, SimError> {
        Ok(SimPerf {
            t_unit_ms: model.t_unit()?,
            capacity: DEFAULT_CAPACITY,
            pcie_t: DEFAULT_PCIE_TOKENS_PER_MS,
            gather_ms: DEFAULT_GATHER_MS,
        })
    }

    pub fn model(&self) -> Result<PerfModel, SimError> {
        Ok(PerfModel::calibrated(self.t_unit_ms)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServingMode {
    /// Length-binned merging buffer, capacity == group count.
    LengthAware,
    /// Unbounded queue; a batch leaves when `max_batch` requests are waiting
    /// or the oldest has waited `timeout_ms`.
    WaitingQueue { max_batch: usize, timeout_ms: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// When false the student number never changes.
    pub adaptive: bool,
    pub idle_window_ms: f64,
    pub min_students: usize,
    pub max_students: usize,
    pub heartbeat_ms: f64,
    pub accuracy_table: Option<AccuracyTable>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            adaptive: true,
            idle_window_ms: 120_000.0,
            min_students: 1,
            max_students: 3,
            heartbeat_ms: 100.0,
            accuracy_table: None,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.min_students == 0 || self.min_students > self.max_students {
            return Err(SimError::Config("need 1 ≤ min_students ≤ max_students".into()));
        }
        if !(self.idle_window_ms >= 0.0) || !self.idle_window_ms.is_finite() {
            return Err(SimError::Config("idle_window_ms must be finite and nonnegative".into()));
        }
        if !(self.heartbeat_ms > 0.0) || !self.heartbeat_ms.is_finite() {
            return Err(SimError::Config("heartbeat_ms must be positive".into()));
        }
        if let Some(t) = &self.accuracy_table {
            if t.len() < self.max_students {
                return Err(SimError::Config(format!(
                    "accuracy table has {} rows but max_students is {}",
                    t.len(),
                    self.max_students
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub nodes: usize,
    pub gpus_per_node: usize,
    /// Initial students per group.
    pub group_size: usize,
    /// Concurrent student slots per GPU.
    pub replicas_per_gpu: usize,
    pub bin_width: usize,
    pub num_bins: usize,
    pub max_len: usize,
    pub max_merge: usize,
    pub student: StudentSpec,
    pub serving: ServingMode,
    pub controller: ControllerConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            nodes: 1,
            gpus_per_node: 4,
            group_size: 3,
            replicas_per_gpu: 4,
            bin_width: 8,
            num_bins: 16,
            max_len: 128,
            max_merge: 4,
            student: StudentSpec::default(),
            serving: ServingMode::LengthAware,
            controller: ControllerConfig::default(),
        }
    }
}

impl ClusterConfig {
    pub fn binning(&self) -> Binning {
        Binning {
            bin_width: self.bin_width,
            num_bins: self.num_bins,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let counts = [
            ("nodes", self.nodes),
            ("gpus_per_node", self.gpus_per_node),
            ("group_size", self.group_size),
            ("replicas_per_gpu", self.replicas_per_gpu),
            ("max_merge", self.max_merge),
            ("student.depth", self.student.depth),
            ("student.width", self.student.width),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(SimError::Config(format!("{name} must be at least 1")));
        }
        self.binning().validate()?;
        self.controller.validate()?;
        let c = &self.controller;
        if !(c.min_students..=c.max_students).contains(&self.group_size) {
            return Err(SimError::Config(format!(
                "group_size {} outside [{}, {}]",
                self.group_size, c.min_students, c.max_students
            )));
        }
        if let ServingMode::WaitingQueue { max_batch, timeout_ms } = self.serving {
            if max_batch == 0 || !(timeout_ms >= 0.0) || !timeout_ms.is_finite() {
                return Err(SimError::Config("waiting queue needs max_batch ≥ 1 and timeout ≥ 0".into()));
            }
        }
        Ok(())
    }
}

/// GPU of student `i` in group `j` for every group on one node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub group_size: usize,
    pub gpus: usize,
    /// `groups[j][i]` is the GPU id.
    pub groups: Vec<Vec<usize>>,
}

impl Allocation {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn gpu(&self, group: usize, student: usize) -> usize {
        self.groups[group][student]
    }
}

/// `max(1, ⌊replicas·G / S⌋)` groups with student `i` of group `j` on GPU
/// `(i + j·S) mod G`.
pub fn allocate_students(group_size: usize, gpus: usize, replicas: usize) -> Result<Allocation, SimError> {
    if group_size == 0 || gpus == 0 || replicas == 0 {
        return Err(SimError::Config("allocation counts must be at least 1".into()));
    }
    let n_groups = (replicas * gpus / group_size).max(1);
    let groups = (0..n_groups)
        .map(|j| (0..group_size).map(|i| (i + j * group_size) % gpus).collect())
        .collect();
    Ok(Allocation {
        group_size,
        gpus,
        groups,
    })
}

/// Perf-model latency of serving `element` on a group of `k_students`.
/// `occupancy` is the largest number of students running on any GPU the
/// group touches, this group included; `spans` is whether it touches more
/// than one GPU. Factors are per GPU: one student's width over one GPU's
/// capacity, shared `occupancy` ways.
pub fn service_time(
    element: &BufferElement,
    k_students: usize,
    occupancy: usize,
    spans: bool,
    student: &StudentSpec,
    perf: &SimPerf,
) -> Result<f64, SimError> {
    if element.is_empty() || k_students == 0 || occupancy == 0 {
        return Err(SimError::Config("service of an empty element or group".into()));
    }
    let f = PerfFactors {
        depth: student.depth,
        width: student.width,
        batch: element.len(),
        seq_len: element.padded_len,
        parallel_models: occupancy,
        gpus: 1,
        capacity: perf.capacity,
        pcie_t: perf.pcie_t,
        gather_ms: perf.gather_ms,
        spans_gpus: spans && k_students > 1,
        wait_model: WaitModel::None,
    };
    Ok(perf.model()?.latency(&f)?)
}

/// Accuracy of the `k`-student prefix, if a table is configured.
pub fn accuracy_at(table: Option<&AccuracyTable>, k: usize) -> Option<f64> {
    table.and_then(|t| t.row(k)).map(|r| r.test_acc)
}
