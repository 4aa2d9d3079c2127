//! Joint training of the shared classifier and all students over every
//! prefix ensemble, so that any suffix of students can be dropped later.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Splits};
use super::ensemble::EnsembleState;
use super::losses::{argmax, soft_cross_entropy, soft_cross_entropy_grad};
use super::table::{AccuracyRow, AccuracyTable};
use super::teacher::Teacher;
use super::boost::DistillConfig;
use super::DistillError;
use crate::nn::{Gradients, LayerGrad, NnError, Optimizer, Parameterized};
use crate::rng;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub state: EnsembleState,
    pub table: AccuracyTable,
    pub best_k: usize,
    /// Mean summed-prefix loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// `Σ_{k=1..M} CE_soft(classifier(B_k(x)), teacher_logits)` for one sample.
pub fn prefix_loss(
    state: &EnsembleState,
    x: &[f64],
    teacher_logits: &[f64],
    temperature: f64,
) -> Result<f64, DistillError> {
    let mut total = 0.0;
    for logits in state.all_prefix_logits(x)? {
        total += soft_cross_entropy(&logits, teacher_logits, temperature)?;
    }
    Ok(total)
}

/// [`prefix_loss`] and its gradient with respect to every parameter of
/// `state`, in [`EnsembleState`] layer order. Gradients of each prefix are
/// accumulated before the students are back-propagated once each.
pub fn prefix_loss_and_grads(
    state: &EnsembleState,
    x: &[f64],
    teacher_logits: &[f64],
    temperature: f64,
) -> Result<(f64, Gradients), DistillError> {
    let mut student_grads: Vec<Gradients> = state.students.iter().map(|s| s.zero_grads()).collect();
    let mut classifier_grad = LayerGrad::zeros_like(&state.classifier);
    let loss = accumulate_prefix(
        state,
        x,
        teacher_logits,
        temperature,
        &mut student_grads,
        &mut classifier_grad,
    )?;
    Ok((loss, assemble(student_grads, classifier_grad)))
}

fn assemble(student_grads: Vec<Gradients>, classifier_grad: LayerGrad) -> Gradients {
    let mut layers: Vec<LayerGrad> = student_grads.into_iter().flat_map(Gradients::into_layers).collect();
    layers.push(classifier_grad);
    Gradients::from_layers(layers)
}

fn accumulate_prefix(
    state: &EnsembleState,
    x: &[f64],
    teacher_logits: &[f64],
    temperature: f64,
    student_grads: &mut [Gradients],
    classifier_grad: &mut LayerGrad,
) -> Result<f64, DistillError> {
    if state.is_empty() {
        return Err(DistillError::NoStudents);
    }
    let outs = state
        .students
        .iter()
        .map(|s| s.forward(x))
        .collect::<Result<Vec<_>, NnError>>()?;
    let d = state.width();
    let mut rep = vec![0.0; d];
    // d(loss)/d(rep_k) summed over every prefix that contains student k.
    let mut d_rep_suffix = vec![vec![0.0; d]; state.len()];
    let mut total = 0.0;
    for (k, (out, &alpha)) in outs.iter().zip(&state.multipliers).enumerate() {
        for (r, v) in rep.iter_mut().zip(&out.final_rep) {
            *r += alpha * v;
        }
        let cache = state.classifier.forward_cached(&rep)?;
        total += soft_cross_entropy(&cache.output, teacher_logits, temperature)?;
        let d_logits = soft_cross_entropy_grad(&cache.output, teacher_logits, temperature)?;
        let d_rep = state.classifier.backward(&cache, &d_logits, classifier_grad)?;
        for (a, b) in d_rep_suffix[k].iter_mut().zip(&d_rep) {
            *a += b;
        }
    }
    // Student j contributes to every prefix k ≥ j.
    let mut running = vec![0.0; d];
    for j in (0..state.len()).rev() {
        for (a, b) in running.iter_mut().zip(&d_rep_suffix[j]) {
            *a += b;
        }
        let alpha = state.multipliers[j];
        let d_final: Vec<f64> = running.iter().map(|g| alpha * g).collect();
        state.students[j].backward_into(&outs[j].trace, Some(&d_final), None, &mut student_grads[j])?;
    }
    Ok(total)
}

/// Fraction of `data` classified correctly by the prefix of size `k`.
pub fn prefix_accuracy(state: &EnsembleState, data: &Dataset, k: usize) -> Result<f64, DistillError> {
    super::teacher::accuracy(data, |x| state.prefix_logits(x, k))
}

fn all_prefix_accuracies(state: &EnsembleState, data: &Dataset) -> Result<Vec<f64>, DistillError> {
    if data.is_empty() {
        return Err(DistillError::Data("accuracy of an empty split".into()));
    }
    let mut correct = vec![0usize; state.len()];
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        for (c, logits) in correct.iter_mut().zip(state.all_prefix_logits(x)?) {
            if argmax(&logits) == y {
                *c += 1;
            }
        }
    }
    Ok(correct.into_iter().map(|c| c as f64 / data.len() as f64).collect())
}

/// Validation and test accuracy of every prefix.
pub fn evaluate_prefixes(state: &EnsembleState, data: &Splits) -> Result<AccuracyTable, DistillError> {
    let val = all_prefix_accuracies(state, &data.validation)?;
    let test = all_prefix_accuracies(state, &data.test)?;
    AccuracyTable::new(
        val.into_iter()
            .zip(test)
            .enumerate()
            .map(|(i, (v, t))| AccuracyRow {
                k: i + 1,
                val_acc: v,
                test_acc: t,
            })
            .collect(),
    )
}

/// Baseline without the pruning stage: only the classifier is trained, on the
/// full group's representation, with every student frozen.
pub fn train_group_classifier(
    teacher: &dyn Teacher,
    mut state: EnsembleState,
    data: &Splits,
    cfg: &DistillConfig,
) -> Result<PruneOutcome, DistillError> {
    let soft = check_and_soft_labels(teacher, &state, data, cfg)?;
    let reps: Vec<Vec<f64>> = data
        .train
        .inputs
        .iter()
        .map(|x| state.ensemble_rep(x, state.len()))
        .collect::<Result<_, _>>()?;
    let tau = cfg.soft_ce_temperature;
    let pc = &cfg.pruning;
    let mut opt = Optimizer::new(pc.optimizer)?;
    let mut shuffle = rng::fork(cfg.seed, "pruning/shuffle");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut grads = state.classifier.zero_grads();
    let mut epoch_losses = Vec::with_capacity(pc.epochs);
    for _ in 0..pc.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(pc.batch_size) {
            for &i in batch {
                let cache = state.classifier.forward_cached(&reps[i])?;
                total += soft_cross_entropy(&cache.output, &soft[i], tau)?;
                let d_logits = soft_cross_entropy_grad(&cache.output, &soft[i], tau)?;
                state
                    .classifier
                    .backward(&cache, &d_logits, &mut grads.layers_mut()[0])?;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut state.classifier, &mut grads).map_err(|e| match e {
                NnError::NonFinite(_) => DistillError::NonFinite("classifier gradients"),
                e => e.into(),
            })?;
        }
        let mean = total / data.train.len() as f64;
        if !mean.is_finite() {
            return Err(DistillError::NonFinite("classifier loss"));
        }
        epoch_losses.push(mean);
    }
    let table = evaluate_prefixes(&state, data)?;
    let best_k = table.best_k();
    Ok(PruneOutcome {
        state,
        table,
        best_k,
        epoch_losses,
    })
}

fn check_and_soft_labels(
    teacher: &dyn Teacher,
    state: &EnsembleState,
    data: &Splits,
    cfg: &DistillConfig,
) -> Result<Vec<Vec<f64>>, DistillError> {
    cfg.validate()?;
    if state.is_empty() {
        return Err(DistillError::NoStudents);
    }
    state.validate()?;
    if teacher.n_classes() != state.n_classes() {
        return Err(DistillError::Width {
            what: "teacher logits",
            expected: state.n_classes(),
            got: teacher.n_classes(),
        });
    }
    if data.train.is_empty() {
        return Err(DistillError::Data("empty training set".into()));
    }
    Ok(data
        .train
        .inputs
        .iter()
        .map(|x| teacher.soft_logits(x))
        .collect::<Result<_, _>>()?)
}

/// One optimizer step per batch on the summed prefix loss, updating the
/// classifier and every student; multipliers stay fixed.
pub fn adaptive_pruning(
    teacher: &dyn Teacher,
    mut state: EnsembleState,
    data: &Splits,
    cfg: &DistillConfig,
) -> Result<PruneOutcome, DistillError> {
    let soft = check_and_soft_labels(teacher, &state, data, cfg)?;
    let tau = cfg.soft_ce_temperature;
    let pc = &cfg.pruning;
    let mut opt = Optimizer::new(pc.optimizer)?;
    let mut shuffle = rng::fork(cfg.seed, "pruning/shuffle");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut student_grads: Vec<Gradients> = state.students.iter().map(|s| s.zero_grads()).collect();
    let mut classifier_grad = LayerGrad::zeros_like(&state.classifier);
    let mut epoch_losses = Vec::with_capacity(pc.epochs);
    for _ in 0..pc.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(pc.batch_size) {
            for &i in batch {
                total += accumulate_prefix(
                    &state,
                    &data.train.inputs[i],
                    &soft[i],
                    tau,
                    &mut student_grads,
                    &mut classifier_grad,
                )?;
            }
            let mut grads = assemble(
                std::mem::take(&mut student_grads),
                std::mem::replace(&mut classifier_grad, LayerGrad::zeros_like(&state.classifier)),
            );
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut state, &mut grads).map_err(|e| match e {
                NnError::NonFinite(_) => DistillError::NonFinite("pruning gradients"),
                e => e.into(),
            })?;
            student_grads = state.students.iter().map(|s| s.zero_grads()).collect();
        }
        let mean = total / data.train.len() as f64;
        if !mean.is_finite() {
            return Err(DistillError::NonFinite("pruning loss"));
        }
        epoch_losses.push(mean);
    }
    let table = evaluate_prefixes(&state, data)?;
    let best_k = table.best_k();
    Ok(PruneOutcome {
        state,
        table,
        best_k,
        epoch_losses,
    })
}
