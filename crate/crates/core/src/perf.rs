//! Analytic latency/throughput model of layered inference on a GPU cluster.
//!
//! ```text
//! latency = D · t_unit · max(1, ⌈W·B·N²·M / (C·G)⌉) + Q(B) + B·N / T + gather
//! throughput_per_gpu = 1000 · B · M / (latency · G)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum PerfError {
    #[error("invalid factors: {0}")]
    Factors(String),
    #[error("per-layer unit time is not calibrated")]
    Uncalibrated,
    #[error("infeasible calibration: {0}")]
    Infeasible(String),
    #[error("latency must be positive, got {0}")]
    NonPositiveLatency(f64),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaitModel {
    None,
    DynamicBatch { timeout_ms: f64, arrival_rps: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfFactors {
    pub depth: usize,
    pub width: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub parallel_models: usize,
    pub gpus: usize,
    /// Work units (`W·B·N²·M` terms) one GPU completes per layer wave.
    pub capacity: f64,
    /// Host-to-device tokens per ms.
    pub pcie_t: f64,
    #[serde(default = "default_gather_ms")]
    pub gather_ms: f64,
    /// Representations are gathered across GPUs, so `gather_ms` applies.
    #[serde(default)]
    pub spans_gpus: bool,
    pub wait_model: WaitModel,
}

fn default_gather_ms() -> f64 {
    DEFAULT_GATHER_MS
}

pub const DEFAULT_GATHER_MS: f64 = 0.2;
pub const DEFAULT_CAPACITY: f64 = 6.4e7;
pub const DEFAULT_PCIE_TOKENS_PER_MS: f64 = 4096.0;
pub const DEFAULT_GPUS: usize = 4;
/// Observed average latency of the 12-layer, 768-wide reference row.
pub const REFERENCE_LATENCY_MS: f64 = 11.6;

impl PerfFactors {
    pub fn validate(&self) -> Result<(), PerfError> {
        let counts = [
            ("depth", self.depth),
            ("width", self.width),
            ("batch", self.batch),
            ("seq_len", self.seq_len),
            ("parallel_models", self.parallel_models),
            ("gpus", self.gpus),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(PerfError::Factors(format!("{name} must be at least 1")));
        }
        if !(self.capacity > 0.0) || !(self.pcie_t > 0.0) {
            return Err(PerfError::Factors("capacity and pcie_t must be positive".into()));
        }
        if !(self.gather_ms >= 0.0) || !self.gather_ms.is_finite() {
            return Err(PerfError::Factors("gather_ms must be finite and nonnegative".into()));
        }
        if let WaitModel::DynamicBatch {
            timeout_ms,
            arrival_rps,
        } = self.wait_model
        {
            if !(arrival_rps > 0.0) {
                return Err(PerfError::Factors("arrival_rps must be positive".into()));
            }
            if !(timeout_ms >= 0.0) {
                return Err(PerfError::Factors("timeout_ms must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// `max(1, ⌈W·B·N²·M / (C·G)⌉)` sequential waves per layer.
    pub fn compute_waves(&self) -> f64 {
        let n = self.seq_len as f64;
        let work = self.width as f64 * self.batch as f64 * n * n * self.parallel_models as f64;
        (work / (self.capacity * self.gpus as f64)).ceil().max(1.0)
    }

    pub fn transfer_ms(&self) -> f64 {
        self.batch as f64 * self.seq_len as f64 / self.pcie_t
    }

    pub fn gather_term_ms(&self) -> f64 {
        if self.spans_gpus {
            self.gather_ms
        } else {
            0.0
        }
    }
}

/// Mean wait of a sample while a batch of `batch` fills under Poisson
/// arrivals, capped by the timeout.
pub fn waiting_time(wait: &WaitModel, batch: usize) -> Result<f64, PerfError> {
    match *wait {
        WaitModel::None => Ok(0.0),
        WaitModel::DynamicBatch {
            timeout_ms,
            arrival_rps,
        } => {
            if !(arrival_rps > 0.0) {
                return Err(PerfError::Factors("arrival_rps must be positive".into()));
            }
            let fill = 1000.0 * batch.saturating_sub(1) as f64 / (2.0 * arrival_rps);
            Ok(timeout_ms.min(fill))
        }
    }
}

pub fn throughput_per_gpu(f: &PerfFactors, latency_ms: f64) -> Result<f64, PerfError> {
    if !(latency_ms > 0.0) {
        return Err(PerfError::NonPositiveLatency(latency_ms));
    }
    Ok(1000.0 * f.batch as f64 * f.parallel_models as f64 / (latency_ms * f.gpus as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedFactors {
    pub name: String,
    pub factors: PerfFactors,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub name: String,
    pub factors: PerfFactors,
    pub latency_ms: f64,
    pub throughput_per_gpu: f64,
}

pub const FACTOR_CSV_HEADER: [&str; 9] = [
    "name",
    "D",
    "W",
    "B",
    "N",
    "M",
    "G",
    "latency_ms",
    "throughput_per_gpu",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    /// Per-layer time of one compute wave.
    pub t_unit_ms: Option<f64>,
}

impl PerfModel {
    pub fn calibrated(t_unit_ms: f64) -> Result<Self, PerfError> {
        if !(t_unit_ms > 0.0) || !t_unit_ms.is_finite() {
            return Err(PerfError::Infeasible(format!("t_unit {t_unit_ms} must be positive")));
        }
        Ok(Self {
            t_unit_ms: Some(t_unit_ms),
        })
    }

    pub fn t_unit(&self) -> Result<f64, PerfError> {
        self.t_unit_ms.ok_or(PerfError::Uncalibrated)
    }

    pub fn compute_ms(&self, f: &PerfFactors) -> Result<f64, PerfError> {
        f.validate()?;
        Ok(f.depth as f64 * self.t_unit()? * f.compute_waves())
    }

    pub fn latency(&self, f: &PerfFactors) -> Result<f64, PerfError> {
        let compute = self.compute_ms(f)?;
        Ok(compute + waiting_time(&f.wait_model, f.batch)? + f.transfer_ms() + f.gather_term_ms())
    }

    /// Solves for the unit time that makes `latency(reference)` equal the
    /// observation, stores it, and returns it.
    pub fn calibrate(&mut self, reference: &PerfFactors, observed_latency_ms: f64) -> Result<f64, PerfError> {
        reference.validate()?;
        let fixed = waiting_time(&reference.wait_model, reference.batch)?
            + reference.transfer_ms()
            + reference.gather_term_ms();
        let compute = observed_latency_ms - fixed;
        if !(compute > 0.0) || !observed_latency_ms.is_finite() {
            return Err(PerfError::Infeasible(format!(
                "observed {observed_latency_ms} ms does not exceed the {fixed} ms of waiting and transfer"
            )));
        }
        let t = compute / (reference.depth as f64 * reference.compute_waves());
        *self = Self::calibrated(t)?;
        Ok(t)
    }

    pub fn row(&self, named: &NamedFactors) -> Result<FactorRow, PerfError> {
        let latency_ms = self.latency(&named.factors)?;
        Ok(FactorRow {
            name: named.name.clone(),
            factors: named.factors,
            latency_ms,
            throughput_per_gpu: throughput_per_gpu(&named.factors, latency_ms)?,
        })
    }

    pub fn factor_table(&self, rows: &[NamedFactors]) -> Result<Vec<FactorRow>, PerfError> {
        rows.iter().map(|r| self.row(r)).collect()
    }
}

pub fn factor_table_csv(rows: &[FactorRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(FACTOR_CSV_HEADER).expect("in-memory write");
    for r in rows {
        let f = &r.factors;
        w.write_record([
            r.name.clone(),
            f.depth.to_string(),
            f.width.to_string(),
            f.batch.to_string(),
            f.seq_len.to_string(),
            f.parallel_models.to_string(),
            f.gpus.to_string(),
            format!("{:.3}", r.latency_ms),
            format!("{:.3}", r.throughput_per_gpu),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn write_factor_table(rows: &[FactorRow], path: &Path) -> Result<(), PerfError> {
    fs::write(path, factor_table_csv(rows)).map_err(|e| PerfError::Io(e.to_string()))
}

/// Padded length of a sample of `n` tokens: the upper edge of its
/// `bin_width`-token bin.
pub fn bin_upper_edge(n: usize, bin_width: usize) -> usize {
    n.max(1).div_ceil(bin_width) * bin_width
}

fn base_factors(depth: usize, width: usize, batch: usize, seq_len: usize) -> PerfFactors {
    PerfFactors {
        depth,
        width,
        batch,
        seq_len,
        parallel_models: DEFAULT_GPUS,
        gpus: DEFAULT_GPUS,
        capacity: DEFAULT_CAPACITY,
        pcie_t: DEFAULT_PCIE_TOKENS_PER_MS,
        gather_ms: DEFAULT_GATHER_MS,
        spans_gpus: false,
        wait_model: WaitModel::DynamicBatch {
            timeout_ms: 10.0,
            arrival_rps: 1500.0,
        },
    }
}

/// The 12-layer, 768-wide dynamic-batching row used for calibration.
pub fn reference_factors() -> PerfFactors {
    base_factors(12, 768, 10, 128)
}

/// The comparison rows: full-size and compressed single models behind a
/// dynamic-batching queue, and a 2-layer group of three 256-wide students
/// serving small same-length batches with four groups per GPU.
pub fn comparison_rows(student_tokens: usize) -> Vec<NamedFactors> {
    let named = |name: &str, factors| NamedFactors {
        name: name.to_string(),
        factors,
    };
    let student = PerfFactors {
        parallel_models: 4 * DEFAULT_GPUS,
        spans_gpus: true,
        wait_model: WaitModel::None,
        ..base_factors(2, 3 * 256, 4, bin_upper_edge(student_tokens, 8))
    };
    vec![
        named("bert-base", reference_factors()),
        named("tinybert", base_factors(4, 312, 10, 128)),
        named("dynabert", base_factors(6, 192, 10, 128)),
        // Early exit: half the layers on average.
        named("deebert", base_factors(6, 768, 10, 128)),
        // Ensemble of the three models above: deepest depth, summed width.
        named("cocktail", base_factors(12, 768 + 312 + 192, 10, 128)),
        named("student-parallel", student),
    ]
}
