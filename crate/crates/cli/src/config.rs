//! Run configurations. Every document is strict JSON: unknown keys are
//! rejected, omitted keys take their defaults. Relative paths resolve against
//! the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use studpar_core::distill::{DistillConfig, GaussianMixtureTask, TeacherTrainConfig};
use studpar_core::perf::{reference_factors, NamedFactors, PerfFactors, REFERENCE_LATENCY_MS};
use studpar_core::sim::presets::steady_workload;
use studpar_core::sim::{ClusterConfig, WorkloadKind};

use crate::error::CliError;

/// Reads and parses `path`, or returns the default when no path is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
        }
    }
}

pub fn resolve(base: Option<&Path>, p: &Path) -> PathBuf {
    match base.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

pub fn require_file(p: &Path, what: &str) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what} {} does not exist", p.display())))
    }
}

/// Teacher training and sequential distillation on the synthetic task. The
/// run seed drives data generation, the teacher and `distill.seed`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillRun {
    pub seed: u64,
    /// Replace the trained residual teacher with a random network of the
    /// student shape, and start the first student from that network.
    pub capacity_matched: bool,
    pub task: GaussianMixtureTask,
    pub teacher: TeacherTrainConfig,
    pub distill: DistillConfig,
}

/// Pruning-aware training of a finished distill run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneRun {
    /// Output directory of a distill run.
    pub distill_dir: PathBuf,
    /// Also fit classifier-only groups without pruning, for comparison.
    pub compare_baselines: bool,
}

/// Reference row and its observed latency, used to fit the unit time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Calibration {
    pub reference: PerfFactors,
    pub observed_latency_ms: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            reference: reference_factors(),
            observed_latency_ms: REFERENCE_LATENCY_MS,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateRun {
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub workload: WorkloadKind,
    pub calibration: Calibration,
    /// CSV produced by `prune`; fills the controller's accuracy table.
    pub accuracy_table: Option<PathBuf>,
}

impl Default for SimulateRun {
    fn default() -> Self {
        SimulateRun {
            seed: 0,
            cluster: ClusterConfig::default(),
            workload: steady_workload(),
            calibration: Calibration::default(),
            accuracy_table: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerfRun {
    pub calibration: Calibration,
    /// Typical request length used to pad the student row.
    pub student_tokens: usize,
    /// Rows to evaluate; the built-in comparison set when absent.
    pub rows: Option<Vec<NamedFactors>>,
}

impl Default for PerfRun {
    fn default() -> Self {
        PerfRun {
            calibration: Calibration::default(),
            student_tokens: 50,
            rows: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportRun {
    /// Metrics files, compared in this order after any given on the command line.
    pub inputs: Vec<PathBuf>,
}
