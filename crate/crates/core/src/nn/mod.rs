//! Minimal dense-network kernel: forward/backward with explicit traces,
//! SGD/Adam, finite-difference checking and checkpoints.

mod checkpoint;
pub mod gradcheck;
mod grads;
mod layer;
mod matrix;
mod model;
mod optim;

pub use checkpoint::{Checkpoint, ModelKind};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use grads::{Gradients, LayerGrad, Parameterized};
pub use layer::{Activation, DenseLayer, LayerCache};
pub use matrix::Matrix;
pub use model::{
    mid_index, ResidualBlock, StudentModel, StudentOutput, StudentTrace, TeacherModel,
    TeacherOutput, TeacherShape, TeacherTrace,
};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{what}: expected length {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("backward called without a matching cached forward pass")]
    MissingForward,
    #[error("gradients are not shape-congruent with the model")]
    Incongruent,
    #[error("invalid architecture: {0}")]
    Architecture(&'static str),
    #[error("invalid configuration: {0}")]
    Config(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
}
