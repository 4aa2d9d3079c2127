//! Sequential boosted training of students against the teacher's
//! representation, with a stacking term on each student's mid layer.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Splits};
use super::ensemble::EnsembleState;
use super::losses::{combined_loss, combined_loss_output_grads};
use super::teacher::Teacher;
use super::DistillError;
use crate::nn::{
    Activation, DenseLayer, Gradients, NnError, Optimizer, OptimizerConfig, Parameterized,
    StudentModel,
};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Weight of the stacking term.
    pub lambda_stack: f64,
    /// Percent of samples taken by largest residual.
    pub subsample_top_pct: f64,
    /// Percent of samples drawn uniformly from the rest.
    pub subsample_rand_pct: f64,
    pub max_students: usize,
    pub epochs_per_student: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub student_depth: usize,
    pub soft_ce_temperature: f64,
    /// Rounds without a strict validation improvement before stopping.
    pub overfit_patience: usize,
    pub seed: u64,
    pub pruning: PruneConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            lambda_stack: 1.0,
            subsample_top_pct: 20.0,
            subsample_rand_pct: 20.0,
            max_students: 8,
            epochs_per_student: 60,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            student_depth: 2,
            soft_ce_temperature: 1.0,
            overfit_patience: 1,
            seed: 0,
            pruning: PruneConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::Config(m.into()));
        if !(self.lambda_stack >= 0.0) {
            return bad("lambda_stack must be nonnegative");
        }
        let (a, b) = (self.subsample_top_pct, self.subsample_rand_pct);
        if !(0.0..=100.0).contains(&a) || !(0.0..=100.0).contains(&b) || a + b > 100.0 {
            return bad("subsample percentages must lie in [0, 100] and sum to at most 100");
        }
        if a == 0.0 && b == 0.0 {
            return bad("subsample percentages are both zero");
        }
        if self.max_students == 0 {
            return bad("max_students must be positive");
        }
        if self.batch_size == 0 || self.pruning.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if self.student_depth < 2 {
            return bad("student_depth must be at least 2");
        }
        if !(self.soft_ce_temperature > 0.0) {
            return bad("soft_ce_temperature must be positive");
        }
        if self.overfit_patience == 0 {
            return bad("overfit_patience must be positive");
        }
        Optimizer::new(self.optimizer)?;
        Optimizer::new(self.pruning.optimizer)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub round: usize,
    /// Mean of ½‖T − B‖² over the validation split after this round.
    pub residual_mse: f64,
    /// Same quantity over the full training split, where α is fit.
    pub train_residual_mse: f64,
    /// Σ⟨T − B_prev, S⟩ over the training split.
    pub inner_product: f64,
    pub step_size: f64,
    pub halted: bool,
    pub lipschitz: f64,
    /// Validation residual strictly below every earlier round.
    pub improved: bool,
    /// The student of this round remains in the returned ensemble.
    pub kept: bool,
    pub train_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Halted,
    Overfitting,
    MaxStudents,
}

#[derive(Clone, Debug)]
pub struct SequentialOutcome {
    pub state: EnsembleState,
    pub records: Vec<ConvergenceRecord>,
    pub stop: StopReason,
    /// Mean combined loss per epoch, one list per round.
    pub epoch_losses: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct StudentTrainingRun {
    pub student: StudentModel,
    pub epoch_losses: Vec<f64>,
    /// Training-set indices the student was fit on.
    pub sample_indices: Vec<usize>,
}

/// Lipschitz constant of the squared residual loss.
pub const MSE_LIPSCHITZ: f64 = 1.0;

fn check_lists(
    t_reps: &[Vec<f64>],
    prev_reps: &[Vec<f64>],
    s_reps: &[Vec<f64>],
) -> Result<(), DistillError> {
    if t_reps.is_empty() {
        return Err(DistillError::Data("line search over an empty set".into()));
    }
    if prev_reps.len() != t_reps.len() || s_reps.len() != t_reps.len() {
        return Err(DistillError::Data("line-search lists differ in length".into()));
    }
    for ((t, p), s) in t_reps.iter().zip(prev_reps).zip(s_reps) {
        if p.len() != t.len() || s.len() != t.len() {
            return Err(DistillError::Width {
                what: "line-search representation",
                expected: t.len(),
                got: if p.len() != t.len() { p.len() } else { s.len() },
            });
        }
    }
    Ok(())
}

/// `(Σ⟨t − prev, s⟩, Σ‖s‖²)`
fn correlation_terms(
    t_reps: &[Vec<f64>],
    prev_reps: &[Vec<f64>],
    s_reps: &[Vec<f64>],
) -> Result<(f64, f64), DistillError> {
    check_lists(t_reps, prev_reps, s_reps)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for ((t, p), s) in t_reps.iter().zip(prev_reps).zip(s_reps) {
        for ((t, p), s) in t.iter().zip(p).zip(s) {
            num += (t - p) * s;
            den += s * s;
        }
    }
    Ok((num, den))
}

/// Σ⟨t − prev, s⟩ over all samples.
pub fn inner_product(
    t_reps: &[Vec<f64>],
    prev_reps: &[Vec<f64>],
    s_reps: &[Vec<f64>],
) -> Result<f64, DistillError> {
    Ok(correlation_terms(t_reps, prev_reps, s_reps)?.0)
}

/// Minimiser of the quadratic `α ↦ Σ ½‖t − prev − α·s‖²`, unclamped.
pub fn line_search_alpha(
    t_reps: &[Vec<f64>],
    prev_reps: &[Vec<f64>],
    s_reps: &[Vec<f64>],
) -> Result<f64, DistillError> {
    let (linear, quadratic) = correlation_terms(t_reps, prev_reps, s_reps)?;
    if quadratic == 0.0 {
        return Err(DistillError::DegenerateStudent);
    }
    Ok(linear / quadratic)
}

/// Functional-gradient step `−⟨∇L_boost, s⟩ / (L·Σ‖s‖²)`, where the gradient
/// of the squared residual at the ensemble output is `−(t − prev)`.
pub fn anyboost_step(
    t_reps: &[Vec<f64>],
    prev_reps: &[Vec<f64>],
    s_reps: &[Vec<f64>],
    lipschitz: f64,
) -> Result<f64, DistillError> {
    if !(lipschitz >= 1.0) {
        return Err(DistillError::Config("lipschitz constant must be at least 1".into()));
    }
    check_lists(t_reps, prev_reps, s_reps)?;
    let mut grad_dot = 0.0;
    let mut s_norm = 0.0;
    for ((t, p), s) in t_reps.iter().zip(prev_reps).zip(s_reps) {
        let grad: Vec<f64> = t.iter().zip(p).map(|(t, p)| -(t - p)).collect();
        for (g, s) in grad.iter().zip(s) {
            grad_dot -= g * s;
            s_norm += s * s;
        }
    }
    if s_norm == 0.0 {
        return Err(DistillError::DegenerateStudent);
    }
    Ok(grad_dot / (lipschitz * s_norm))
}

/// Boosting stops once the new member no longer correlates with the residual.
pub fn halts(inner_product: f64) -> bool {
    inner_product <= 0.0
}

/// `(⌈a%·n⌉, ⌈b%·n⌉)`, clamped so the two never exceed `n` together.
pub fn subsample_sizes(n: usize, top_pct: f64, rand_pct: f64) -> (usize, usize) {
    let ceil_pct = |p: f64| ((p * n as f64) / 100.0).ceil() as usize;
    let top = ceil_pct(top_pct).min(n);
    let rand = ceil_pct(rand_pct).min(n - top);
    (top, rand)
}

/// Indices of the top `a%` by residual norm (descending, lower index first on
/// ties) followed by `b%` drawn uniformly without replacement from the rest.
pub fn residual_subsample_indices(
    residual_norms: &[f64],
    top_pct: f64,
    rand_pct: f64,
    seed: u64,
) -> Result<Vec<usize>, DistillError> {
    if top_pct == 0.0 && rand_pct == 0.0 {
        return Err(DistillError::EmptySubset);
    }
    if !(0.0..=100.0).contains(&top_pct) || !(0.0..=100.0).contains(&rand_pct) {
        return Err(DistillError::Config("subsample percentages must lie in [0, 100]".into()));
    }
    if residual_norms.iter().any(|r| !r.is_finite()) {
        return Err(DistillError::NonFinite("residual norms"));
    }
    let n = residual_norms.len();
    let (n_top, n_rand) = subsample_sizes(n, top_pct, rand_pct);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| residual_norms[j].total_cmp(&residual_norms[i]).then(i.cmp(&j)));
    let rest = order.split_off(n_top);
    let mut picked = order;
    let mut r = rng::fork(seed, "subsample");
    picked.extend(
        rand::seq::index::sample(&mut r, rest.len(), n_rand)
            .into_iter()
            .map(|i| rest[i]),
    );
    Ok(picked)
}

pub fn residual_subsample(
    data: &Dataset,
    residual_norms: &[f64],
    top_pct: f64,
    rand_pct: f64,
    seed: u64,
) -> Result<Dataset, DistillError> {
    if residual_norms.len() != data.len() {
        return Err(DistillError::Data("one residual norm per sample".into()));
    }
    let idx = residual_subsample_indices(residual_norms, top_pct, rand_pct, seed)?;
    Ok(data.subset(&idx))
}

/// Combined loss of `student` on one sample.
pub fn student_combined_loss(
    student: &StudentModel,
    x: &[f64],
    t_rep: &[f64],
    prev: &[f64],
    lambda: f64,
) -> Result<f64, DistillError> {
    let out = student.forward(x)?;
    combined_loss(t_rep, prev, &out.final_rep, &out.mid_rep, lambda)
}

/// Combined loss of `student` on one sample and its parameter gradients.
pub fn student_combined_loss_and_grads(
    student: &StudentModel,
    x: &[f64],
    t_rep: &[f64],
    prev: &[f64],
    lambda: f64,
) -> Result<(f64, Gradients), DistillError> {
    let mut grads = student.zero_grads();
    let loss = accumulate_combined(student, x, t_rep, prev, lambda, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_combined(
    student: &StudentModel,
    x: &[f64],
    t_rep: &[f64],
    prev: &[f64],
    lambda: f64,
    grads: &mut Gradients,
) -> Result<f64, DistillError> {
    let out = student.forward(x)?;
    let loss = combined_loss(t_rep, prev, &out.final_rep, &out.mid_rep, lambda)?;
    let (d_final, d_mid) =
        combined_loss_output_grads(t_rep, prev, &out.final_rep, &out.mid_rep, lambda)?;
    let d_mid = (lambda != 0.0).then_some(d_mid.as_slice());
    student.backward_into(&out.trace, Some(&d_final), d_mid, grads)?;
    Ok(loss)
}

struct RoundData<'a> {
    inputs: &'a [Vec<f64>],
    t_reps: &'a [Vec<f64>],
    prev_reps: &'a [Vec<f64>],
}

fn residual_norms(t_reps: &[Vec<f64>], prev_reps: &[Vec<f64>]) -> Vec<f64> {
    t_reps
        .iter()
        .zip(prev_reps)
        .map(|(t, p)| t.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect()
}

fn initial_student(
    teacher: &dyn Teacher,
    state: &EnsembleState,
    d_in: usize,
    cfg: &DistillConfig,
    seed_student: Option<&StudentModel>,
) -> Result<StudentModel, DistillError> {
    if let Some(last) = state.students.last() {
        return Ok(last.clone());
    }
    if let Some(s) = seed_student {
        if s.width() != teacher.rep_width() || s.d_in() != d_in {
            return Err(DistillError::Width {
                what: "seed student",
                expected: teacher.rep_width(),
                got: s.width(),
            });
        }
        return Ok(s.clone());
    }
    let mut r = rng::fork(cfg.seed, "student/init");
    Ok(StudentModel::new_random(d_in, teacher.rep_width(), cfg.student_depth, &mut r)?)
}

/// Trains one new student on the subsample chosen by the current residual.
/// The first student has no previous ensemble, so it fits the teacher on the
/// whole split without a stacking term.
fn train_round(
    init: StudentModel,
    data: &RoundData<'_>,
    cfg: &DistillConfig,
    round: usize,
) -> Result<StudentTrainingRun, DistillError> {
    let n = data.inputs.len();
    if n == 0 {
        return Err(DistillError::Data("empty training set".into()));
    }
    let sample_indices = if round == 0 {
        (0..n).collect()
    } else {
        let seed = rng::fork(cfg.seed, &format!("subsample/{round}")).random::<u64>();
        residual_subsample_indices(
            &residual_norms(data.t_reps, data.prev_reps),
            cfg.subsample_top_pct,
            cfg.subsample_rand_pct,
            seed,
        )?
    };
    let lambda = if round == 0 { 0.0 } else { cfg.lambda_stack };
    let mut student = init;
    let mut opt = Optimizer::new(cfg.optimizer)?;
    let mut shuffle = rng::fork(cfg.seed, &format!("student/{round}/shuffle"));
    let mut order = sample_indices.clone();
    let mut grads = student.zero_grads();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs_per_student);
    for _ in 0..cfg.epochs_per_student {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for &i in batch {
                total += accumulate_combined(
                    &student,
                    &data.inputs[i],
                    &data.t_reps[i],
                    &data.prev_reps[i],
                    lambda,
                    &mut grads,
                )?;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut student, &mut grads)
                .map_err(|e| match e {
                    NnError::NonFinite(_) => DistillError::NonFinite("student gradients"),
                    e => e.into(),
                })?;
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() {
            return Err(DistillError::NonFinite("student training loss"));
        }
        epoch_losses.push(mean);
    }
    Ok(StudentTrainingRun {
        student,
        epoch_losses,
        sample_indices,
    })
}

fn teacher_reps(teacher: &dyn Teacher, data: &Dataset) -> Result<Vec<Vec<f64>>, DistillError> {
    data.inputs
        .iter()
        .map(|x| Ok(teacher.represent(x)?))
        .collect()
}

fn ensemble_reps(state: &EnsembleState, data: &Dataset) -> Result<Vec<Vec<f64>>, DistillError> {
    data.inputs
        .iter()
        .map(|x| state.partial_rep(x, state.len()))
        .collect()
}

/// Trains the next student of `state`: a copy of the last student, or for an
/// empty ensemble `seed_student` (fresh seeded init when absent). Neither the
/// teacher nor the existing students are modified.
pub fn train_one_student(
    teacher: &dyn Teacher,
    state: &EnsembleState,
    data: &Dataset,
    cfg: &DistillConfig,
    seed_student: Option<&StudentModel>,
) -> Result<StudentTrainingRun, DistillError> {
    cfg.validate()?;
    let t = teacher_reps(teacher, data)?;
    let prev = ensemble_reps(state, data)?;
    let init = initial_student(teacher, state, data.d_in(), cfg, seed_student)?;
    train_round(
        init,
        &RoundData {
            inputs: &data.inputs,
            t_reps: &t,
            prev_reps: &prev,
        },
        cfg,
        state.len(),
    )
}

/// Mean of ½‖t − b‖² over samples.
pub fn residual_mse(t_reps: &[Vec<f64>], b_reps: &[Vec<f64>]) -> f64 {
    if t_reps.is_empty() {
        return 0.0;
    }
    let total: f64 = t_reps
        .iter()
        .zip(b_reps)
        .map(|(t, b)| 0.5 * t.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    total / t_reps.len() as f64
}

fn add_scaled(acc: &mut [Vec<f64>], reps: &[Vec<f64>], alpha: f64) {
    for (a, r) in acc.iter_mut().zip(reps) {
        for (x, y) in a.iter_mut().zip(r) {
            *x += alpha * y;
        }
    }
}

/// Adds students one at a time until the new member stops correlating with
/// the residual, validation residual stops improving for `overfit_patience`
/// rounds (the non-improving tail is discarded), or `max_students` is reached.
pub fn sequential_training(
    teacher: &dyn Teacher,
    data: &Splits,
    cfg: &DistillConfig,
    seed_student: Option<&StudentModel>,
) -> Result<SequentialOutcome, DistillError> {
    cfg.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(DistillError::Data("training and validation splits must be nonempty".into()));
    }
    let width = teacher.rep_width();
    let classifier = DenseLayer::glorot(
        width,
        teacher.n_classes(),
        Activation::Identity,
        &mut rng::fork(cfg.seed, "classifier/init"),
    );
    let mut state = EnsembleState::new(classifier);
    let t_train = teacher_reps(teacher, &data.train)?;
    let t_val = teacher_reps(teacher, &data.validation)?;
    let mut b_train = vec![vec![0.0; width]; data.train.len()];
    let mut b_val = vec![vec![0.0; width]; data.validation.len()];
    let mut records: Vec<ConvergenceRecord> = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_len = 0usize;
    let mut since_best = 0usize;
    let stop = loop {
        let round = state.len();
        let init = initial_student(teacher, &state, data.train.d_in(), cfg, seed_student)?;
        let run = train_round(
            init,
            &RoundData {
                inputs: &data.train.inputs,
                t_reps: &t_train,
                prev_reps: &b_train,
            },
            cfg,
            round,
        )?;
        epoch_losses.push(run.epoch_losses);
        let s_train = ensemble_member_reps(&run.student, &data.train)?;
        let (inner, den) = correlation_terms(&t_train, &b_train, &s_train)?;
        let halted = halts(inner);
        let step_size = if round == 0 {
            1.0
        } else if den == 0.0 {
            0.0
        } else {
            anyboost_step(&t_train, &b_train, &s_train, MSE_LIPSCHITZ)?
        };
        if halted {
            records.push(ConvergenceRecord {
                round,
                residual_mse: residual_mse(&t_val, &b_val),
                train_residual_mse: residual_mse(&t_train, &b_train),
                inner_product: inner,
                step_size,
                halted,
                lipschitz: MSE_LIPSCHITZ,
                improved: false,
                kept: false,
                train_samples: run.sample_indices.len(),
            });
            if state.is_empty() {
                return Err(DistillError::NoStudents);
            }
            break StopReason::Halted;
        }
        let s_val = ensemble_member_reps(&run.student, &data.validation)?;
        add_scaled(&mut b_train, &s_train, step_size);
        add_scaled(&mut b_val, &s_val, step_size);
        let val_mse = residual_mse(&t_val, &b_val);
        let improved = val_mse < best_val;
        state.push(run.student, step_size)?;
        if improved {
            best_val = val_mse;
            best_len = state.len();
            since_best = 0;
        } else {
            since_best += 1;
        }
        records.push(ConvergenceRecord {
            round,
            residual_mse: val_mse,
            train_residual_mse: residual_mse(&t_train, &b_train),
            inner_product: inner,
            step_size,
            halted,
            lipschitz: MSE_LIPSCHITZ,
            improved,
            kept: true,
            train_samples: run.sample_indices.len(),
        });
        if since_best >= cfg.overfit_patience {
            state.truncate(best_len);
            for r in records.iter_mut().filter(|r| r.round >= best_len) {
                r.kept = false;
            }
            break StopReason::Overfitting;
        }
        if state.len() >= cfg.max_students {
            break StopReason::MaxStudents;
        }
    };
    Ok(SequentialOutcome {
        state,
        records,
        stop,
        epoch_losses,
    })
}

fn ensemble_member_reps(s: &StudentModel, data: &Dataset) -> Result<Vec<Vec<f64>>, DistillError> {
    data.inputs.iter().map(|x| Ok(s.final_rep(x)?)).collect()
}
