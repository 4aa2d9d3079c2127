use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use studpar_core::distill::*;
use studpar_core::nn::{
    finite_diff_check, Activation, DenseLayer, NnError, Parameterized, StudentModel,
};

fn rand_vecs(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

fn sum_half_sq(t: &[Vec<f64>], p: &[Vec<f64>], s: &[Vec<f64>], alpha: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..t.len() {
        for j in 0..t[i].len() {
            let r = t[i][j] - p[i][j] - alpha * s[i][j];
            total += 0.5 * r * r;
        }
    }
    total
}

#[test]
fn line_search_exact_fit_and_orthogonal() {
    let t = vec![vec![2.0, 1.0], vec![0.5, -1.0]];
    let p = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
    let s: Vec<Vec<f64>> = t
        .iter()
        .zip(&p)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
        .collect();
    assert_eq!(line_search_alpha(&t, &p, &s).unwrap(), 1.0);
    // Residuals [1,0] and [0.5,-1]; s orthogonal to each.
    let orth = vec![vec![0.0, 3.0], vec![2.0, 1.0]];
    assert_eq!(line_search_alpha(&t, &p, &orth).unwrap(), 0.0);
    let zeros = vec![vec![0.0, 0.0]; 2];
    assert!(matches!(
        line_search_alpha(&t, &p, &zeros),
        Err(DistillError::DegenerateStudent)
    ));
    assert!(line_search_alpha(&[], &[], &[]).is_err());
}

#[test]
fn line_search_matches_grid_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 20 {
        let t = rand_vecs(&mut rng, 4, 3, 1.0);
        let p = rand_vecs(&mut rng, 4, 3, 1.0);
        let s = rand_vecs(&mut rng, 4, 3, 1.0);
        let a = line_search_alpha(&t, &p, &s).unwrap();
        if a.abs() > 3.9 {
            continue;
        }
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=80_000 {
            let alpha = -4.0 + i as f64 * 1e-4;
            let v = sum_half_sq(&t, &p, &s, alpha);
            if v < best.0 {
                best = (v, alpha);
            }
        }
        assert!((best.1 - a).abs() <= 1e-4, "{} vs {}", best.1, a);
        checked += 1;
    }
}

#[test]
fn anyboost_identity_and_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let t = rand_vecs(&mut rng, 5, 4, 2.0);
        let p = rand_vecs(&mut rng, 5, 4, 2.0);
        let s = rand_vecs(&mut rng, 5, 4, 2.0);
        let ls = line_search_alpha(&t, &p, &s).unwrap();
        assert_eq!(anyboost_step(&t, &p, &s, 1.0).unwrap().to_bits(), ls.to_bits());
        assert_eq!(anyboost_step(&t, &p, &s, 2.0).unwrap(), ls / 2.0);
    }
    assert!(anyboost_step(&[vec![1.0]], &[vec![0.0]], &[vec![1.0]], 0.5).is_err());
}

#[test]
fn halting_probe_fires_on_negative_correlation() {
    // Σ⟨t − prev, s⟩ = 0.2·(−1) + (−0.1)·1 = −0.3
    let t = vec![vec![0.2], vec![-0.1]];
    let p = vec![vec![0.0], vec![0.0]];
    let s = vec![vec![-1.0], vec![1.0]];
    let ip = inner_product(&t, &p, &s).unwrap();
    assert!((ip + 0.3).abs() < 1e-15);
    assert!(anyboost_step(&t, &p, &s, MSE_LIPSCHITZ).unwrap() <= 0.0);
    assert!(halts(ip));
    assert!(!halts(1e-12));
    assert!(halts(0.0));
}

#[test]
fn subsample_examples() {
    let norms: Vec<f64> = (0..10).rev().map(|v| v as f64).collect();
    let all = residual_subsample_indices(&[1.0, 3.0, 3.0, 2.0], 100.0, 0.0, 1).unwrap();
    assert_eq!(all, vec![1, 2, 3, 0]);
    let top = residual_subsample_indices(&norms, 20.0, 0.0, 1).unwrap();
    assert_eq!(top, vec![0, 1]);
    assert!(matches!(
        residual_subsample_indices(&norms, 0.0, 0.0, 1),
        Err(DistillError::EmptySubset)
    ));
    let data = Dataset::new((0..10).map(|i| vec![i as f64]).collect(), vec![0; 10], 2).unwrap();
    let sub = residual_subsample(&data, &norms, 20.0, 0.0, 1).unwrap();
    assert_eq!(sub.inputs, vec![vec![0.0], vec![1.0]]);
}

/// Independent reimplementation: full sort, then a draw from the remainder
/// with the same generator and sampling routine.
fn subsample_oracle(norms: &[f64], n_top: usize, n_rand: usize, seed: u64) -> Vec<usize> {
    let mut pairs: Vec<(f64, usize)> = norms.iter().copied().zip(0..).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let top: Vec<usize> = pairs[..n_top].iter().map(|p| p.1).collect();
    let rest: Vec<usize> = pairs[n_top..].iter().map(|p| p.1).collect();
    let mut r = studpar_core::rng::fork(seed, "subsample");
    let drawn = rand::seq::index::sample(&mut r, rest.len(), n_rand);
    top.into_iter().chain(drawn.into_iter().map(|i| rest[i])).collect()
}

#[test]
fn subsample_top_plus_random_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let norms: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..5.0)).collect();
    let got = residual_subsample_indices(&norms, 20.0, 30.0, 42).unwrap();
    assert_eq!(got.len(), 5);
    assert_eq!(got, subsample_oracle(&norms, 2, 3, 42));
    assert_eq!(got, residual_subsample_indices(&norms, 20.0, 30.0, 42).unwrap());
}

proptest! {
    #[test]
    fn subsample_size_and_uniqueness(
        norms in proptest::collection::vec(0.0f64..10.0, 1..200),
        a in 0u32..=60,
        b in 0u32..=40,
        seed in any::<u64>(),
    ) {
        prop_assume!(a + b > 0);
        let n = norms.len();
        let idx = residual_subsample_indices(&norms, a as f64, b as f64, seed).unwrap();
        let want = (a as usize * n).div_ceil(100) + (b as usize * n).div_ceil(100);
        prop_assert_eq!(idx.len(), want.min(n));
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), idx.len());
        prop_assert!(idx.iter().all(|&i| i < n));
    }
}

fn small_task() -> GaussianMixtureTask {
    GaussianMixtureTask {
        n_train: 200,
        n_validation: 100,
        n_test: 100,
        ..Default::default()
    }
}

/// Teacher whose representation is a fixed multiple of a student network.
struct ScaledTeacher {
    net: StudentModel,
    factor: f64,
}

impl Teacher for ScaledTeacher {
    fn rep_width(&self) -> usize {
        self.net.width()
    }
    fn n_classes(&self) -> usize {
        2
    }
    fn represent(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.net.final_rep(x)?.into_iter().map(|v| v * self.factor).collect())
    }
    fn soft_logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let r = self.net.final_rep(x)?;
        Ok(vec![r[0], -r[0]])
    }
}

#[test]
fn self_distillation_fixed_point() {
    let splits = small_task().generate(1).unwrap();
    let teacher = random_shallow_teacher(8, 16, 2, 2, 5).unwrap();
    let state = EnsembleState::new(DenseLayer::zeros(16, 2, Activation::Identity));
    let cfg = DistillConfig {
        lambda_stack: 0.0,
        epochs_per_student: 2,
        ..Default::default()
    };
    let run = train_one_student(&teacher, &state, &splits.train, &cfg, Some(&teacher.net)).unwrap();
    assert_eq!(run.epoch_losses[0], 0.0);
    assert_eq!(run.student.param_bytes(), teacher.net.param_bytes());
}

#[test]
fn first_student_targets_teacher_directly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = StudentModel::new_random(3, 4, 2, &mut rng).unwrap();
    let x = [0.1, 0.2, 0.3];
    let t = [0.5, -0.5, 0.25, 0.0];
    let zero = [0.0; 4];
    let out = s.forward(&x).unwrap();
    let with_empty = student_combined_loss(&s, &x, &t, &zero, 0.0).unwrap();
    assert_eq!(with_empty, boost_loss(&t, &zero, &out.final_rep).unwrap());
    let direct: f64 = 0.5 * t.iter().zip(&out.final_rep).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    assert!((with_empty - direct).abs() < 1e-15);
}

#[test]
fn training_reduces_combined_loss() {
    let task = GaussianMixtureTask {
        n_train: 120,
        n_validation: 40,
        n_test: 40,
        ..Default::default()
    };
    let splits = task.generate(2).unwrap();
    let teacher = studpar_core::nn::TeacherModel::new_random(
        Default::default(),
        &mut studpar_core::rng::fork(2, "test-teacher"),
    );
    let state = EnsembleState::new(DenseLayer::zeros(16, 2, Activation::Identity));
    let cfg = DistillConfig {
        epochs_per_student: 200,
        ..Default::default()
    };
    let run = train_one_student(&teacher, &state, &splits.train, &cfg, None).unwrap();
    assert_eq!(run.epoch_losses.len(), 200);
    assert!(run.epoch_losses[199] < run.epoch_losses[0], "{:?}", (run.epoch_losses[0], run.epoch_losses[199]));
}

#[test]
fn teacher_and_previous_students_are_untouched() {
    let splits = small_task().generate(3).unwrap();
    let teacher = studpar_core::nn::TeacherModel::new_random(
        Default::default(),
        &mut studpar_core::rng::fork(3, "test-teacher"),
    );
    let cfg = DistillConfig {
        epochs_per_student: 3,
        ..Default::default()
    };
    let mut state = EnsembleState::new(DenseLayer::zeros(16, 2, Activation::Identity));
    let first = train_one_student(&teacher, &state, &splits.train, &cfg, None).unwrap();
    state.push(first.student, 1.0).unwrap();
    let before_t = teacher.param_bytes();
    let before_s = state.param_bytes();
    let second = train_one_student(&teacher, &state, &splits.train, &cfg, None).unwrap();
    assert_eq!(teacher.param_bytes(), before_t);
    assert_eq!(state.param_bytes(), before_s);
    assert_ne!(second.student.param_bytes(), state.students[0].param_bytes());
    assert_eq!(second.sample_indices.len(), 80);
}

#[test]
fn capacity_matched_teacher_needs_one_student() {
    let splits = small_task().generate(4).unwrap();
    let teacher = random_shallow_teacher(8, 16, 2, 2, 9).unwrap();
    let cfg = DistillConfig {
        epochs_per_student: 5,
        ..Default::default()
    };
    let out = sequential_training(&teacher, &splits, &cfg, Some(&teacher.net)).unwrap();
    assert_eq!(out.state.len(), 1);
    assert!(out.records[0].residual_mse < 1e-6);
    assert!(out.records.iter().all(|r| r.halted == halts(r.inner_product)));
}

#[test]
fn anticorrelated_student_halts_training() {
    let splits = small_task().generate(5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = StudentModel::new_random(8, 16, 2, &mut rng).unwrap();
    let teacher = ScaledTeacher {
        net: net.clone(),
        factor: 0.5,
    };
    let cfg = DistillConfig {
        epochs_per_student: 0,
        ..Default::default()
    };
    let out = sequential_training(&teacher, &splits, &cfg, Some(&net)).unwrap();
    assert_eq!(out.stop, StopReason::Halted);
    assert_eq!(out.state.len(), 1);
    let last = out.records.last().unwrap();
    assert!(last.halted && last.inner_product <= 0.0 && !last.kept);
}

fn toy_teacher(splits: &Splits, seed: u64) -> studpar_core::nn::TeacherModel {
    let cfg = TeacherTrainConfig {
        epochs: 5,
        ..Default::default()
    };
    train_teacher(&splits.train, &cfg, seed).unwrap().0
}

#[test]
fn sequential_training_is_monotone_and_deterministic() {
    let splits = small_task().generate(6).unwrap();
    let teacher = toy_teacher(&splits, 6);
    let cfg = DistillConfig {
        epochs_per_student: 10,
        max_students: 4,
        seed: 6,
        ..Default::default()
    };
    let a = sequential_training(&teacher, &splits, &cfg, None).unwrap();
    let b = sequential_training(&teacher, &splits, &cfg, None).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.state.param_bytes(), b.state.param_bytes());
    assert_eq!(a.state.multipliers[0], 1.0);
    let kept: Vec<&ConvergenceRecord> = a.records.iter().filter(|r| r.kept).collect();
    assert_eq!(kept.len(), a.state.len());
    for w in kept.windows(2) {
        assert!(w[1].train_residual_mse <= w[0].train_residual_mse + 1e-9);
        assert!(w[1].residual_mse <= w[0].residual_mse);
    }
    for r in &a.records {
        assert_eq!(r.halted, r.inner_product <= 0.0);
        assert_eq!(r.lipschitz, 1.0);
    }
}

fn two_student_state(seed: u64) -> EnsembleState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classifier = DenseLayer::glorot(4, 3, Activation::Identity, &mut rng);
    let mut st = EnsembleState::new(classifier);
    st.push(StudentModel::new_random(3, 4, 2, &mut rng).unwrap(), 1.0).unwrap();
    st.push(StudentModel::new_random(3, 4, 2, &mut rng).unwrap(), rng.random_range(0.2..1.5)).unwrap();
    st
}

#[test]
fn prefix_gradients_match_finite_differences() {
    for seed in 0..5 {
        let st = two_student_state(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tl: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (loss, g) = prefix_loss_and_grads(&st, &x, &tl, 1.0).unwrap();
        assert!((loss - prefix_loss(&st, &x, &tl, 1.0).unwrap()).abs() < 1e-14);
        let report = finite_diff_check(
            &st,
            |s| prefix_loss(s, &x, &tl, 1.0).map_err(|_| NnError::NonFinite("loss")),
            &g,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn single_student_pruning_is_plain_distillation() {
    let mut st = two_student_state(9);
    st.truncate(1);
    let x = [0.3, -0.2, 0.5];
    let tl = [1.0, 0.0, -1.0];
    let (loss, g) = prefix_loss_and_grads(&st, &x, &tl, 1.0).unwrap();
    let rep = st.students[0].final_rep(&x).unwrap();
    let cache = st.classifier.forward_cached(&rep).unwrap();
    assert_eq!(loss, soft_cross_entropy(&cache.output, &tl, 1.0).unwrap());
    let d_logits = soft_cross_entropy_grad(&cache.output, &tl, 1.0).unwrap();
    let mut cg = st.classifier.zero_grads();
    st.classifier.backward(&cache, &d_logits, &mut cg.layers_mut()[0]).unwrap();
    assert_eq!(g.layers().last().unwrap(), &cg.layers()[0]);
}

#[test]
fn pruning_produces_full_table() {
    let splits = small_task().generate(7).unwrap();
    let teacher = toy_teacher(&splits, 7);
    let cfg = DistillConfig {
        epochs_per_student: 5,
        max_students: 3,
        overfit_patience: 3,
        pruning: PruneConfig {
            epochs: 2,
            ..Default::default()
        },
        ..Default::default()
    };
    let seq = sequential_training(&teacher, &splits, &cfg, None).unwrap();
    let m = seq.state.len();
    let alphas = seq.state.multipliers.clone();
    let out = adaptive_pruning(&teacher, seq.state, &splits, &cfg).unwrap();
    assert_eq!(out.table.len(), m);
    assert_eq!(out.table.rows().iter().map(|r| r.k).collect::<Vec<_>>(), (1..=m).collect::<Vec<_>>());
    assert_eq!(out.best_k, out.table.best_k());
    assert_eq!(out.state.multipliers, alphas);

    let empty = EnsembleState::new(DenseLayer::zeros(16, 2, Activation::Identity));
    assert!(matches!(
        adaptive_pruning(&teacher, empty, &splits, &cfg),
        Err(DistillError::NoStudents)
    ));
}
