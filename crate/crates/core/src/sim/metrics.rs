use serde::{Deserialize, Serialize};

use super::SimError;

/// One completed request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub node: usize,
    pub arrival_ms: f64,
    /// When the request's element entered the buffer or batch.
    pub enqueue_ms: f64,
    pub dispatch_ms: f64,
    pub completion_ms: f64,
    pub students: usize,
    pub batch: usize,
    pub padded_len: usize,
}

impl RequestRecord {
    pub fn latency_ms(&self) -> f64 {
        self.completion_ms - self.arrival_ms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimMetrics {
    pub avg_latency_ms: Option<f64>,
    pub p95_latency_ms: Option<f64>,
    /// Completed requests per second per GPU over first arrival to last completion.
    pub throughput_per_gpu: Option<f64>,
    pub completed: usize,
    pub generated: usize,
    /// Pushes refused by a full buffer; each is retried later.
    pub rejected_pushes: usize,
    pub student_number_timeline: Vec<(f64, usize)>,
    pub accuracy_timeline: Vec<(f64, f64)>,
}

pub(crate) fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Nearest-rank percentile: the `⌈p·n⌉`-th smallest value.
pub fn nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64).ceil() as usize).max(1);
    Some(v[rank - 1])
}

impl SimMetrics {
    pub(crate) fn from_records(
        records: &[RequestRecord],
        generated: usize,
        rejected_pushes: usize,
        total_gpus: usize,
        student_number_timeline: Vec<(f64, usize)>,
        accuracy_timeline: Vec<(f64, f64)>,
    ) -> Self {
        let lat: Vec<f64> = records.iter().map(RequestRecord::latency_ms).collect();
        let avg = (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64);
        let first = records.iter().map(|r| r.arrival_ms).min_by(f64::total_cmp);
        let last = records.iter().map(|r| r.completion_ms).max_by(f64::total_cmp);
        let throughput = match (first, last) {
            (Some(a), Some(b)) if b > a => Some(records.len() as f64 / ((b - a) / 1000.0) / total_gpus as f64),
            _ => None,
        };
        SimMetrics {
            avg_latency_ms: avg.map(round6),
            p95_latency_ms: nearest_rank(&lat, 0.95).map(round6),
            throughput_per_gpu: throughput.map(round6),
            completed: records.len(),
            generated,
            rejected_pushes,
            student_number_timeline: student_number_timeline
                .into_iter()
                .map(|(t, k)| (round6(t), k))
                .collect(),
            accuracy_timeline: accuracy_timeline
                .into_iter()
                .map(|(t, a)| (round6(t), round6(a)))
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(format!("metrics: {e}")))
    }
}

/// Requests completed in `[t0, t1)`, per second per GPU.
pub fn window_throughput(records: &[RequestRecord], t0: f64, t1: f64, total_gpus: usize) -> f64 {
    let n = records
        .iter()
        .filter(|r| r.completion_ms >= t0 && r.completion_ms < t1)
        .count();
    n as f64 / ((t1 - t0) / 1000.0) / total_gpus as f64
}

pub const LATENCY_CSV_HEADER: [&str; 10] = [
    "id",
    "node",
    "arrival_ms",
    "enqueue_ms",
    "dispatch_ms",
    "completion_ms",
    "latency_ms",
    "students",
    "batch",
    "padded_len",
];

/// Per-request CSV in id order, times with 6 decimals.
pub fn latency_csv(records: &[RequestRecord]) -> String {
    let mut sorted: Vec<&RequestRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LATENCY_CSV_HEADER).expect("in-memory write");
    for r in sorted {
        w.write_record([
            r.id.to_string(),
            r.node.to_string(),
            format!("{:.6}", r.arrival_ms),
            format!("{:.6}", r.enqueue_ms),
            format!("{:.6}", r.dispatch_ms),
            format!("{:.6}", r.completion_ms),
            format!("{:.6}", r.latency_ms()),
            r.students.to_string(),
            r.batch.to_string(),
            r.padded_len.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
