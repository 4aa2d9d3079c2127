use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DistillError;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self, DistillError> {
        if inputs.len() != labels.len() {
            return Err(DistillError::Data(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DistillError::Data(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, split: Split) -> &Dataset {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Classes are unions of isotropic Gaussian blobs. `noise_std` relative to
/// `separation` controls the class overlap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianMixtureTask {
    pub d_in: usize,
    pub n_classes: usize,
    pub components_per_class: usize,
    /// Radius of the sphere the component means are drawn on.
    pub separation: f64,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
}

impl Default for GaussianMixtureTask {
    fn default() -> Self {
        Self {
            d_in: 8,
            n_classes: 2,
            components_per_class: 3,
            separation: 2.0,
            noise_std: 0.6,
            n_train: 1200,
            n_validation: 400,
            n_test: 400,
        }
    }
}

impl GaussianMixtureTask {
    pub fn validate(&self) -> Result<(), DistillError> {
        if !(2..=8).contains(&self.n_classes) {
            return Err(DistillError::Config("n_classes must lie in 2..=8".into()));
        }
        if self.d_in == 0 || self.components_per_class == 0 {
            return Err(DistillError::Config("d_in and components_per_class must be positive".into()));
        }
        if !(self.noise_std > 0.0) || !(self.separation > 0.0) {
            return Err(DistillError::Config("noise_std and separation must be positive".into()));
        }
        if self.n_train == 0 || self.n_validation == 0 || self.n_test == 0 {
            return Err(DistillError::Config("every split needs at least one sample".into()));
        }
        Ok(())
    }

    pub fn generate(&self, seed: u64) -> Result<Splits, DistillError> {
        self.validate()?;
        let mut rng = rng::fork(seed, "task/gaussian-mixture");
        let n_components = self.n_classes * self.components_per_class;
        let means: Vec<Vec<f64>> = (0..n_components)
            .map(|_| {
                let v: Vec<f64> = (0..self.d_in)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * self.separation / norm).collect()
            })
            .collect();
        let total = self.n_train + self.n_validation + self.n_test;
        // Balanced labels, shuffled.
        let mut labels: Vec<usize> = (0..total).map(|i| i % self.n_classes).collect();
        labels.shuffle(&mut rng);
        let inputs: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| {
                let comp = c * self.components_per_class + rng.random_range(0..self.components_per_class);
                means[comp]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + self.noise_std * z
                    })
                    .collect()
            })
            .collect();
        let cut = |a: usize, b: usize| {
            Dataset::new(inputs[a..b].to_vec(), labels[a..b].to_vec(), self.n_classes)
        };
        let v0 = self.n_train;
        let t0 = v0 + self.n_validation;
        Ok(Splits {
            train: cut(0, v0)?,
            validation: cut(v0, t0)?,
            test: cut(t0, total)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_sized() {
        let task = GaussianMixtureTask::default();
        let a = task.generate(3).unwrap();
        let b = task.generate(3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 1200);
        assert_eq!(a.validation.len(), 400);
        assert_eq!(a.test.len(), 400);
        assert_eq!(a.train.d_in(), 8);
        assert_ne!(a, task.generate(4).unwrap());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        assert!(Dataset::new(vec![vec![0.0]], vec![2], 2).is_err());
        assert!(Dataset::new(vec![vec![0.0]], vec![], 2).is_err());
    }

    #[test]
    fn task_validation() {
        let mut task = GaussianMixtureTask::default();
        task.n_classes = 9;
        assert!(task.generate(0).is_err());
    }
}
