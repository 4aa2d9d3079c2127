//! Merges simulation metrics into a comparison table and a long-format
//! series table.

use std::fs;
use std::path::{Path, PathBuf};

use studpar_core::sim::SimMetrics;

use crate::error::CliError;

pub const COMPARISON_HEADER: [&str; 11] = [
    "run",
    "avg_latency_ms",
    "p95_latency_ms",
    "throughput_per_gpu",
    "completed",
    "generated",
    "final_students",
    "min_students",
    "p95_over_avg",
    "avg_vs_first",
    "rank",
];

pub const SERIES_HEADER: [&str; 4] = ["run", "time_ms", "series", "value"];

pub struct NamedMetrics {
    pub run: String,
    pub metrics: SimMetrics,
}

/// File stem, or the parent directory's name for files called `metrics.json`.
pub fn run_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = path.parent().and_then(Path::file_name) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

pub fn load_all(paths: &[PathBuf]) -> Result<Vec<NamedMetrics>, CliError> {
    if paths.is_empty() {
        return Err(CliError::config("report needs at least one metrics file"));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            let metrics = SimMetrics::from_json(&text)
                .map_err(|e| CliError::config(format!("{}: schema mismatch: {e}", p.display())))?;
            Ok(NamedMetrics {
                run: run_label(p),
                metrics,
            })
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Rank 1 is the lowest average latency; runs without one rank last; ties
/// keep input order.
pub fn ranks(runs: &[NamedMetrics]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| runs[i].metrics.avg_latency_ms.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    let mut rank = vec![0; runs.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r + 1;
    }
    rank
}

pub fn comparison_csv(runs: &[NamedMetrics]) -> String {
    let rank = ranks(runs);
    let first = runs.first().and_then(|r| r.metrics.avg_latency_ms);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARISON_HEADER).expect("in-memory write");
    for (r, rank) in runs.iter().zip(rank) {
        let m = &r.metrics;
        let ks = m.student_number_timeline.iter().map(|&(_, k)| k);
        let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        w.write_record([
            r.run.clone(),
            opt(m.avg_latency_ms),
            opt(m.p95_latency_ms),
            opt(m.throughput_per_gpu),
            m.completed.to_string(),
            m.generated.to_string(),
            ks.clone().last().map(|k| k.to_string()).unwrap_or_default(),
            ks.min().map(|k| k.to_string()).unwrap_or_default(),
            opt(ratio(m.p95_latency_ms, m.avg_latency_ms)),
            opt(ratio(m.avg_latency_ms, first)),
            rank.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn series_csv(runs: &[NamedMetrics]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SERIES_HEADER).expect("in-memory write");
    for r in runs {
        for &(t, k) in &r.metrics.student_number_timeline {
            w.write_record([r.run.clone(), format!("{t:.6}"), "students".into(), k.to_string()])
                .expect("in-memory write");
        }
        for &(t, a) in &r.metrics.accuracy_timeline {
            w.write_record([r.run.clone(), format!("{t:.6}"), "accuracy".into(), format!("{a:.6}")])
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
