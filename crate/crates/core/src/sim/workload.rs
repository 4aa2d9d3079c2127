use std::fs;
use std::path::PathBuf;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub arrival_ms: f64,
    pub length_tokens: usize,
}

/// Token-length bucket `[lo, hi]` drawn uniformly, chosen with weight `weight`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthBucket {
    pub lo: usize,
    pub hi: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LengthDist {
    Fixed { tokens: usize },
    Histogram { buckets: Vec<LengthBucket> },
}

impl Default for LengthDist {
    /// Short-sentence mix: mostly under 64 tokens with a long tail to 128.
    fn default() -> Self {
        let b = |lo, hi, weight| LengthBucket { lo, hi, weight };
        LengthDist::Histogram {
            buckets: vec![b(1, 16, 0.2), b(17, 32, 0.35), b(33, 64, 0.3), b(65, 128, 0.15)],
        }
    }
}

impl LengthDist {
    fn validate(&self, max_len: usize) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        match self {
            LengthDist::Fixed { tokens } => {
                if *tokens == 0 || *tokens > max_len {
                    return bad(format!("fixed length {tokens} outside 1..={max_len}"));
                }
            }
            LengthDist::Histogram { buckets } => {
                if buckets.is_empty() {
                    return bad("length histogram has no buckets".into());
                }
                for bk in buckets {
                    if bk.lo == 0 || bk.lo > bk.hi || bk.hi > max_len {
                        return bad(format!("length bucket [{}, {}] outside 1..={max_len}", bk.lo, bk.hi));
                    }
                    if !(bk.weight >= 0.0) || !bk.weight.is_finite() {
                        return bad("bucket weights must be finite and nonnegative".into());
                    }
                }
                if buckets.iter().all(|bk| bk.weight == 0.0) {
                    return bad("bucket weights are all zero".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    pub rps: f64,
    pub duration_ms: f64,
    #[serde(default)]
    pub lengths: LengthDist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadKind {
    Poisson(PoissonSpec),
    /// Consecutive Poisson phases, each starting where the previous ended.
    Phases { phases: Vec<PoissonSpec> },
    /// CSV with header `arrival_ms,length_tokens`; arrivals are multiplied by `scale`.
    Trace { path: PathBuf, scale: f64 },
}

fn poisson_phase(
    spec: &PoissonSpec,
    start_ms: f64,
    max_len: usize,
    seed: u64,
    label: &str,
    out: &mut Vec<Request>,
) -> Result<(), SimError> {
    if !(spec.rps > 0.0) || !spec.rps.is_finite() {
        return Err(SimError::Config("rps must be positive".into()));
    }
    if !(spec.duration_ms >= 0.0) || !spec.duration_ms.is_finite() {
        return Err(SimError::Config("duration_ms must be finite and nonnegative".into()));
    }
    spec.lengths.validate(max_len)?;
    let gap = Exp::new(spec.rps / 1000.0).map_err(|e| SimError::Config(e.to_string()))?;
    let mut arrivals = rng::fork(seed, &format!("{label}/arrivals"));
    let mut lengths = rng::fork(seed, &format!("{label}/lengths"));
    let picker = match &spec.lengths {
        LengthDist::Histogram { buckets } => Some(
            WeightedIndex::new(buckets.iter().map(|b| b.weight))
                .map_err(|e| SimError::Config(e.to_string()))?,
        ),
        LengthDist::Fixed { .. } => None,
    };
    let mut t = start_ms;
    loop {
        t += gap.sample(&mut arrivals);
        if t >= start_ms + spec.duration_ms {
            return Ok(());
        }
        let length_tokens = match (&spec.lengths, &picker) {
            (LengthDist::Fixed { tokens }, _) => *tokens,
            (LengthDist::Histogram { buckets }, Some(p)) => {
                let b = buckets[p.sample(&mut lengths)];
                lengths.random_range(b.lo..=b.hi)
            }
            _ => unreachable!("histogram always has a picker"),
        };
        out.push(Request {
            id: out.len() as u64,
            arrival_ms: t,
            length_tokens,
        });
    }
}

/// Parses a trace; lengths above `max_len` are clipped to it.
pub fn parse_trace(text: &str, scale: f64, max_len: usize) -> Result<Vec<Request>, SimError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(SimError::Config("trace scale must be positive".into()));
    }
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = r
        .headers()
        .map_err(|e| SimError::Trace { line: 1, msg: e.to_string() })?;
    if header.iter().ne(["arrival_ms", "length_tokens"]) {
        return Err(SimError::Trace {
            line: 1,
            msg: "expected header arrival_ms,length_tokens".into(),
        });
    }
    let mut out: Vec<Request> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| SimError::Trace {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let err = |msg: String| SimError::Trace { line, msg };
        if rec.len() != 2 {
            return Err(err(format!("expected 2 fields, got {}", rec.len())));
        }
        let arrival: f64 = rec[0].parse().map_err(|e| err(format!("arrival_ms: {e}")))?;
        let length: usize = rec[1].parse().map_err(|e| err(format!("length_tokens: {e}")))?;
        if !(arrival >= 0.0) || !arrival.is_finite() {
            return Err(err("arrival_ms must be finite and nonnegative".into()));
        }
        if length == 0 {
            return Err(err("length_tokens must be at least 1".into()));
        }
        let arrival_ms = arrival * scale;
        if out.last().is_some_and(|p| arrival_ms < p.arrival_ms) {
            return Err(err("arrival_ms decreases".into()));
        }
        out.push(Request {
            id: out.len() as u64,
            arrival_ms,
            length_tokens: length.min(max_len),
        });
    }
    Ok(out)
}

/// Arrival-sorted requests with dense ids.
pub fn generate_workload(kind: &WorkloadKind, max_len: usize, seed: u64) -> Result<Vec<Request>, SimError> {
    let mut out = Vec::new();
    match kind {
        WorkloadKind::Poisson(spec) => poisson_phase(spec, 0.0, max_len, seed, "workload", &mut out)?,
        WorkloadKind::Phases { phases } => {
            let mut start = 0.0;
            for (i, spec) in phases.iter().enumerate() {
                poisson_phase(spec, start, max_len, seed, &format!("workload/phase{i}"), &mut out)?;
                start += spec.duration_ms;
            }
        }
        WorkloadKind::Trace { path, scale } => {
            let text = fs::read_to_string(path)
                .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
            out = parse_trace(&text, *scale, max_len)?;
        }
    }
    Ok(out)
}

/// Start of every phase, and the end of the last.
pub fn phase_boundaries(phases: &[PoissonSpec]) -> Vec<f64> {
    let mut b = vec![0.0];
    for p in phases {
        b.push(b.last().unwrap() + p.duration_ms);
    }
    b
}
