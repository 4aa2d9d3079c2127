use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DistillError;

pub const ACCURACY_CSV_HEADER: [&str; 3] = ["k", "val_acc", "test_acc"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub k: usize,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Accuracy of every prefix ensemble `k = 1..=M`. Values are held at six
/// decimals so the CSV form reloads exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AccuracyRow>", into = "Vec<AccuracyRow>")]
pub struct AccuracyTable {
    rows: Vec<AccuracyRow>,
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl AccuracyTable {
    pub fn new(rows: Vec<AccuracyRow>) -> Result<Self, DistillError> {
        if rows.is_empty() {
            return Err(DistillError::Data("accuracy table is empty".into()));
        }
        let mut out = Vec::with_capacity(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            if r.k != i + 1 {
                return Err(DistillError::Data(format!(
                    "accuracy table row {} has k = {}, expected {}",
                    i + 1,
                    r.k,
                    i + 1
                )));
            }
            for v in [r.val_acc, r.test_acc] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DistillError::Data(format!("accuracy {v} outside [0, 1]")));
                }
            }
            out.push(AccuracyRow {
                k: r.k,
                val_acc: round6(r.val_acc),
                test_acc: round6(r.test_acc),
            });
        }
        Ok(Self { rows: out })
    }

    pub fn rows(&self) -> &[AccuracyRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, k: usize) -> Option<&AccuracyRow> {
        k.checked_sub(1).and_then(|i| self.rows.get(i))
    }

    /// Argmax of validation accuracy; the smaller `k` wins ties.
    pub fn best_k(&self) -> usize {
        let mut best = &self.rows[0];
        for r in &self.rows[1..] {
            if r.val_acc > best.val_acc {
                best = r;
            }
        }
        best.k
    }

    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(ACCURACY_CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                format!("{:.6}", r.val_acc),
                format!("{:.6}", r.test_acc),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
    }

    pub fn from_csv_str(text: &str) -> Result<Self, DistillError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| DistillError::Csv(e.to_string()))?;
        if header.iter().ne(ACCURACY_CSV_HEADER) {
            return Err(DistillError::Csv(format!(
                "expected header {}, got {}",
                ACCURACY_CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| DistillError::Csv(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| {
                rec.get(i)
                    .ok_or_else(|| DistillError::Csv(format!("line {line}: missing field {i}")))
            };
            let parse_err = |e: &dyn std::fmt::Display| DistillError::Csv(format!("line {line}: {e}"));
            rows.push(AccuracyRow {
                k: field(0)?.parse().map_err(|e| parse_err(&e))?,
                val_acc: field(1)?.parse().map_err(|e| parse_err(&e))?,
                test_acc: field(2)?.parse().map_err(|e| parse_err(&e))?,
            });
        }
        Self::new(rows)
    }

    pub fn export(&self, path: &Path) -> Result<(), DistillError> {
        fs::write(path, self.to_csv_string()).map_err(|e| DistillError::Io(e.to_string()))
    }

    pub fn import(path: &Path) -> Result<Self, DistillError> {
        let text = fs::read_to_string(path).map_err(|e| DistillError::Io(e.to_string()))?;
        Self::from_csv_str(&text)
    }
}

impl TryFrom<Vec<AccuracyRow>> for AccuracyTable {
    type Error = DistillError;

    fn try_from(rows: Vec<AccuracyRow>) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl From<AccuracyTable> for Vec<AccuracyRow> {
    fn from(t: AccuracyTable) -> Self {
        t.rows
    }
}

pub fn export_accuracy_table(table: &AccuracyTable, path: &Path) -> Result<(), DistillError> {
    table.export(path)
}
