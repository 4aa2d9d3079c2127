use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::nn::{DenseLayer, Parameterized, StudentModel};

/// Students with their multipliers and the shared classifier. The prefix
/// ensemble of size `k` is `Σ_{m<k} α_m · S_m(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub students: Vec<StudentModel>,
    pub multipliers: Vec<f64>,
    pub classifier: DenseLayer,
}

impl EnsembleState {
    pub fn new(classifier: DenseLayer) -> Self {
        Self {
            students: Vec::new(),
            multipliers: Vec::new(),
            classifier,
        }
    }

    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    /// The first multiplier is pinned to exactly 1.
    pub fn push(&mut self, student: StudentModel, alpha: f64) -> Result<(), DistillError> {
        if self.students.is_empty() && alpha != 1.0 {
            return Err(DistillError::Config("the first multiplier must be exactly 1".into()));
        }
        if !alpha.is_finite() {
            return Err(DistillError::NonFinite("multiplier"));
        }
        if student.width() != self.classifier.input_dim() {
            return Err(DistillError::Width {
                what: "student representation",
                expected: self.classifier.input_dim(),
                got: student.width(),
            });
        }
        self.students.push(student);
        self.multipliers.push(alpha);
        Ok(())
    }

    pub fn truncate(&mut self, k: usize) {
        self.students.truncate(k);
        self.multipliers.truncate(k);
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if self.students.len() != self.multipliers.len() {
            return Err(DistillError::Config("one multiplier per student".into()));
        }
        if self.multipliers.first().is_some_and(|&a| a != 1.0) {
            return Err(DistillError::Config("the first multiplier must be exactly 1".into()));
        }
        for s in &self.students {
            s.validate()?;
            if s.width() != self.classifier.input_dim() {
                return Err(DistillError::Width {
                    what: "student representation",
                    expected: self.classifier.input_dim(),
                    got: s.width(),
                });
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.classifier.input_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    fn check_k(&self, k: usize) -> Result<(), DistillError> {
        if k == 0 || k > self.len() {
            return Err(DistillError::KOutOfRange { k, m: self.len() });
        }
        Ok(())
    }

    /// `Σ_{m<k} α_m · S_m(x)`, for `1 ≤ k ≤ len`.
    pub fn ensemble_rep(&self, x: &[f64], k: usize) -> Result<Vec<f64>, DistillError> {
        self.check_k(k)?;
        self.partial_rep(x, k)
    }

    /// Like [`EnsembleState::ensemble_rep`] but `k = 0` gives the zero vector.
    pub(crate) fn partial_rep(&self, x: &[f64], k: usize) -> Result<Vec<f64>, DistillError> {
        let mut rep = vec![0.0; self.width()];
        for (s, &a) in self.students[..k].iter().zip(&self.multipliers) {
            for (r, v) in rep.iter_mut().zip(s.final_rep(x)?) {
                *r += a * v;
            }
        }
        Ok(rep)
    }

    pub fn prefix_logits(&self, x: &[f64], k: usize) -> Result<Vec<f64>, DistillError> {
        Ok(self.classifier.forward(&self.ensemble_rep(x, k)?)?)
    }

    /// Logits of every prefix `k = 1..=len` from one pass over the students.
    pub fn all_prefix_logits(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, DistillError> {
        let mut rep = vec![0.0; self.width()];
        let mut out = Vec::with_capacity(self.len());
        for (s, &a) in self.students.iter().zip(&self.multipliers) {
            for (r, v) in rep.iter_mut().zip(s.final_rep(x)?) {
                *r += a * v;
            }
            out.push(self.classifier.forward(&rep)?);
        }
        Ok(out)
    }
}

/// Layer order: every student in ensemble order, then the classifier.
impl Parameterized for EnsembleState {
    fn layers(&self) -> Vec<&DenseLayer> {
        let mut v: Vec<&DenseLayer> = self.students.iter().flat_map(|s| s.layers()).collect();
        v.push(&self.classifier);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> =
            self.students.iter_mut().flat_map(|s| s.layers_mut()).collect();
        v.push(&mut self.classifier);
        v
    }
}
