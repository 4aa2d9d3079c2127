//! Boosted, virtually stacked distillation of a deep teacher into shallow
//! parallel students, and prefix-aware pruning of the resulting group.

mod boost;
mod data;
mod ensemble;
mod losses;
mod pruning;
mod table;
mod teacher;

pub use boost::{
    anyboost_step, halts, inner_product, line_search_alpha, residual_mse, residual_subsample,
    residual_subsample_indices, sequential_training, student_combined_loss,
    student_combined_loss_and_grads, subsample_sizes, train_one_student, ConvergenceRecord,
    DistillConfig, PruneConfig, SequentialOutcome, StopReason, StudentTrainingRun, MSE_LIPSCHITZ,
};
pub use data::{Dataset, GaussianMixtureTask, Split, Splits};
pub use ensemble::EnsembleState;
pub use losses::{
    argmax, boost_loss, combined_loss, combined_loss_output_grads, hard_cross_entropy,
    log_softmax, soft_cross_entropy, soft_cross_entropy_grad, softmax, stack_loss,
};
pub use pruning::{
    adaptive_pruning, evaluate_prefixes, prefix_accuracy, prefix_loss, prefix_loss_and_grads,
    PruneOutcome, train_group_classifier,
};
pub use table::{export_accuracy_table, AccuracyRow, AccuracyTable, ACCURACY_CSV_HEADER};
pub use teacher::{
    accuracy, random_shallow_teacher, teacher_accuracy, train_teacher, ShallowTeacher, Teacher,
    TeacherTrainConfig,
};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{what}: expected width {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("student representations are identically zero")]
    DegenerateStudent,
    #[error("subsample percentages select no samples")]
    EmptySubset,
    #[error("prefix size {k} outside 1..={m}")]
    KOutOfRange { k: usize, m: usize },
    #[error("ensemble has no students")]
    NoStudents,
    #[error("data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl DistillError {
    /// Divergence or non-finite arithmetic, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            DistillError::NonFinite(_) | DistillError::Nn(NnError::NonFinite(_))
        )
    }
}
