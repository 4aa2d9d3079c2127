use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::losses::{argmax, hard_cross_entropy};
use super::DistillError;
use crate::nn::{
    Activation, DenseLayer, NnError, Optimizer, OptimizerConfig, Parameterized, StudentModel,
    TeacherModel, TeacherShape,
};
use crate::rng;

/// A frozen source of target representations and soft labels.
pub trait Teacher {
    fn rep_width(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn represent(&self, x: &[f64]) -> Result<Vec<f64>, NnError>;
    fn soft_logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError>;
}

impl Teacher for TeacherModel {
    fn rep_width(&self) -> usize {
        self.width()
    }

    fn n_classes(&self) -> usize {
        TeacherModel::n_classes(self)
    }

    fn represent(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.final_rep(x)
    }

    fn soft_logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.logits(x)
    }
}

/// Teacher with exactly a student's architecture under a linear head, so a
/// single student can represent it without error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShallowTeacher {
    pub net: StudentModel,
    pub head: DenseLayer,
}

impl Teacher for ShallowTeacher {
    fn rep_width(&self) -> usize {
        self.net.width()
    }

    fn n_classes(&self) -> usize {
        self.head.output_dim()
    }

    fn represent(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.net.final_rep(x)
    }

    fn soft_logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.head.forward(&self.net.final_rep(x)?)
    }
}

impl Parameterized for ShallowTeacher {
    fn layers(&self) -> Vec<&DenseLayer> {
        let mut v = self.net.layers();
        v.push(&self.head);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v = self.net.layers_mut();
        v.push(&mut self.head);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherTrainConfig {
    pub shape: TeacherShape,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            shape: TeacherShape::default(),
            epochs: 40,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Trains a residual teacher with hard-label cross-entropy. Returns the model
/// and the mean training loss of every epoch.
pub fn train_teacher(
    data: &Dataset,
    cfg: &TeacherTrainConfig,
    seed: u64,
) -> Result<(TeacherModel, Vec<f64>), DistillError> {
    if data.is_empty() {
        return Err(DistillError::Data("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(DistillError::Config("batch_size must be positive".into()));
    }
    let mut shape = cfg.shape;
    shape.d_in = data.d_in();
    shape.n_classes = data.n_classes;
    let mut teacher = TeacherModel::new_random(shape, &mut rng::fork(seed, "teacher/init"));
    let mut shuffle_rng = rng::fork(seed, "teacher/shuffle");
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = teacher.zero_grads();
            for &i in batch {
                let out = teacher.forward(&data.inputs[i])?;
                let (loss, d_logits) = hard_cross_entropy(&out.logits, data.labels[i])?;
                total += loss;
                grads.accumulate(&teacher.backward(&out.trace, None, Some(&d_logits))?)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut teacher, &mut grads)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(DistillError::NonFinite("teacher training loss"));
        }
        epoch_losses.push(mean);
    }
    Ok((teacher, epoch_losses))
}

/// Fraction of samples whose argmax logit equals the label.
pub fn accuracy<F>(data: &Dataset, mut logits: F) -> Result<f64, DistillError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, DistillError>,
{
    if data.is_empty() {
        return Err(DistillError::Data("accuracy of an empty split".into()));
    }
    let mut correct = 0usize;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        if argmax(&logits(x)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn teacher_accuracy(teacher: &dyn Teacher, data: &Dataset) -> Result<f64, DistillError> {
    accuracy(data, |x| Ok(teacher.soft_logits(x)?))
}

/// Random shallow teacher of the given student shape with a Glorot head.
pub fn random_shallow_teacher(
    d_in: usize,
    width: usize,
    depth: usize,
    n_classes: usize,
    seed: u64,
) -> Result<ShallowTeacher, DistillError> {
    let mut r = rng::fork(seed, "shallow-teacher/init");
    let net = StudentModel::new_random(d_in, width, depth, &mut r)?;
    let head = DenseLayer::glorot(width, n_classes, Activation::Identity, &mut r);
    Ok(ShallowTeacher { net, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::data::GaussianMixtureTask;

    #[test]
    fn teacher_learns_the_toy_task() {
        let task = GaussianMixtureTask::default();
        let splits = task.generate(0).unwrap();
        let cfg = TeacherTrainConfig {
            epochs: 10,
            ..Default::default()
        };
        let (t, losses) = train_teacher(&splits.train, &cfg, 0).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let acc = teacher_accuracy(&t, &splits.test).unwrap();
        assert!(acc > 0.7, "teacher accuracy {acc}");
    }

    #[test]
    fn shallow_teacher_reports_its_dims() {
        let t = random_shallow_teacher(8, 16, 2, 3, 1).unwrap();
        assert_eq!(t.rep_width(), 16);
        assert_eq!(Teacher::n_classes(&t), 3);
        assert_eq!(t.soft_logits(&[0.0; 8]).unwrap().len(), 3);
    }
}
