//! Representation losses for boosting and stacking, and the soft/hard
//! cross-entropies used for classifier training.

use super::DistillError;

fn check_width(what: &'static str, expected: usize, got: usize) -> Result<(), DistillError> {
    if expected != got {
        return Err(DistillError::Width {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

fn half_sq_norm(v: impl Iterator<Item = f64>) -> f64 {
    0.5 * v.map(|x| x * x).sum::<f64>()
}

/// ½‖t − prev − s‖²
pub fn boost_loss(t_rep: &[f64], prev_ensemble: &[f64], s_final: &[f64]) -> Result<f64, DistillError> {
    check_width("prev_ensemble", t_rep.len(), prev_ensemble.len())?;
    check_width("s_final", t_rep.len(), s_final.len())?;
    Ok(half_sq_norm(
        t_rep
            .iter()
            .zip(prev_ensemble)
            .zip(s_final)
            .map(|((t, p), s)| t - p - s),
    ))
}

/// ½‖prev − s_mid‖²
pub fn stack_loss(prev_ensemble: &[f64], s_mid: &[f64]) -> Result<f64, DistillError> {
    check_width("s_mid", prev_ensemble.len(), s_mid.len())?;
    Ok(half_sq_norm(prev_ensemble.iter().zip(s_mid).map(|(p, m)| p - m)))
}

pub fn combined_loss(
    t_rep: &[f64],
    prev_ensemble: &[f64],
    s_final: &[f64],
    s_mid: &[f64],
    lambda: f64,
) -> Result<f64, DistillError> {
    if !(lambda >= 0.0) {
        return Err(DistillError::Config("lambda_stack must be nonnegative".into()));
    }
    let boost = boost_loss(t_rep, prev_ensemble, s_final)?;
    if lambda == 0.0 {
        return Ok(boost);
    }
    Ok(boost + lambda * stack_loss(prev_ensemble, s_mid)?)
}

/// Gradients of [`combined_loss`] with respect to `s_final` and `s_mid`.
pub fn combined_loss_output_grads(
    t_rep: &[f64],
    prev_ensemble: &[f64],
    s_final: &[f64],
    s_mid: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), DistillError> {
    check_width("prev_ensemble", t_rep.len(), prev_ensemble.len())?;
    check_width("s_final", t_rep.len(), s_final.len())?;
    check_width("s_mid", t_rep.len(), s_mid.len())?;
    let d_final = t_rep
        .iter()
        .zip(prev_ensemble)
        .zip(s_final)
        .map(|((t, p), s)| s - (t - p))
        .collect();
    let d_mid = prev_ensemble
        .iter()
        .zip(s_mid)
        .map(|(p, m)| lambda * (m - p))
        .collect();
    Ok((d_final, d_mid))
}

/// Stabilised log-softmax of `z / temperature`.
pub fn log_softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / temperature));
    let lse = max + z.iter().map(|&v| (v / temperature - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v / temperature - lse).collect()
}

pub fn softmax(z: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(z, temperature).into_iter().map(f64::exp).collect()
}

fn check_logits(student: &[f64], teacher: &[f64], temperature: f64) -> Result<(), DistillError> {
    check_width("teacher logits", student.len(), teacher.len())?;
    if !(temperature > 0.0) {
        return Err(DistillError::Config("temperature must be positive".into()));
    }
    if student.iter().chain(teacher).any(|v| !v.is_finite()) {
        return Err(DistillError::NonFinite("logits"));
    }
    Ok(())
}

/// −Σ_c softmax(teacher/τ)_c · log softmax(student/τ)_c
pub fn soft_cross_entropy(student_logits: &[f64], teacher_logits: &[f64], temperature: f64) -> Result<f64, DistillError> {
    check_logits(student_logits, teacher_logits, temperature)?;
    let p = softmax(teacher_logits, temperature);
    let log_q = log_softmax(student_logits, temperature);
    Ok(-p.iter().zip(&log_q).map(|(p, lq)| p * lq).sum::<f64>())
}

/// d soft_cross_entropy / d student_logits = (q − p) / τ.
pub fn soft_cross_entropy_grad(
    student_logits: &[f64],
    teacher_logits: &[f64],
    temperature: f64,
) -> Result<Vec<f64>, DistillError> {
    check_logits(student_logits, teacher_logits, temperature)?;
    let p = softmax(teacher_logits, temperature);
    let q = softmax(student_logits, temperature);
    Ok(q.iter().zip(&p).map(|(q, p)| (q - p) / temperature).collect())
}

/// Hard-label cross-entropy and its gradient at the logits.
pub fn hard_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), DistillError> {
    if label >= logits.len() {
        return Err(DistillError::Data(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(DistillError::NonFinite("logits"));
    }
    let log_q = log_softmax(logits, 1.0);
    let mut grad: Vec<f64> = log_q.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok((-log_q[label], grad))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn boost_loss_examples() {
        assert_eq!(boost_loss(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(boost_loss(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert_eq!(boost_loss(&[2.0, 1.0], &[1.0, 1.0], &[0.5, 0.0]).unwrap(), 0.125);
        assert!(boost_loss(&[1.0], &[0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn stack_loss_examples() {
        assert_eq!(stack_loss(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(stack_loss(&[2.0, 0.0], &[0.0, 0.0]).unwrap(), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let d = rng.random_range(1..20);
            let p: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut acc = 0.0;
            for i in 0..d {
                let diff = p[i] - m[i];
                acc += diff * diff;
            }
            let got = stack_loss(&p, &m).unwrap();
            assert!((got - acc / 2.0).abs() <= 1e-12 * acc.max(1.0));
        }
    }

    #[test]
    fn combined_loss_examples() {
        let t = [2.0, 1.0];
        let p = [1.0, 1.0];
        let s = [0.5, 0.0];
        let m = [0.3, -0.2];
        assert_eq!(
            combined_loss(&t, &p, &s, &m, 0.0).unwrap(),
            boost_loss(&t, &p, &s).unwrap()
        );
        // boost 0.5, stack 2.0
        let v = combined_loss(&[1.0, 0.0], &[2.0, 0.0], &[-2.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(v, 2.5);
        assert!(combined_loss(&t, &p, &s, &m, -1.0).is_err());
    }

    #[test]
    fn soft_ce_examples() {
        let v = soft_cross_entropy(&[0.0, 0.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let v = soft_cross_entropy(&[10.0, -10.0], &[10.0, -10.0], 1.0).unwrap();
        assert!(v <= 1e-4);
        assert!(soft_cross_entropy(&[f64::NAN, 0.0], &[0.0, 0.0], 1.0).is_err());
        assert!(soft_cross_entropy(&[0.0, 0.0], &[0.0, 0.0], 0.0).is_err());
    }

    fn scalar_soft_ce(s: &[f64], t: &[f64], tau: f64) -> f64 {
        let mut ms = f64::NEG_INFINITY;
        let mut mt = f64::NEG_INFINITY;
        for i in 0..s.len() {
            if s[i] / tau > ms {
                ms = s[i] / tau;
            }
            if t[i] / tau > mt {
                mt = t[i] / tau;
            }
        }
        let mut zs = 0.0;
        let mut zt = 0.0;
        for i in 0..s.len() {
            zs += (s[i] / tau - ms).exp();
            zt += (t[i] / tau - mt).exp();
        }
        let mut total = 0.0;
        for i in 0..s.len() {
            let p = (t[i] / tau - mt).exp() / zt;
            let log_q = s[i] / tau - ms - zs.ln();
            total -= p * log_q;
        }
        total
    }

    #[test]
    fn soft_ce_matches_scalar_oracle_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s: Vec<f64> = (0..4).map(|_| rng.random_range(-30.0..30.0)).collect();
            let t: Vec<f64> = (0..4).map(|_| rng.random_range(-30.0..30.0)).collect();
            let tau = rng.random_range(0.5..4.0);
            let got = soft_cross_entropy(&s, &t, tau).unwrap();
            let want = scalar_soft_ce(&s, &t, tau);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0));
            let g = soft_cross_entropy_grad(&s, &t, tau).unwrap();
            for c in 0..4 {
                let h = 1e-6;
                let mut sp = s.clone();
                sp[c] += h;
                let mut sm = s.clone();
                sm[c] -= h;
                let fd = (scalar_soft_ce(&sp, &t, tau) - scalar_soft_ce(&sm, &t, tau)) / (2.0 * h);
                assert!((fd - g[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hard_ce_and_argmax() {
        let (l, g) = hard_cross_entropy(&[0.0, 0.0], 1).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, -0.5]);
        assert!(hard_cross_entropy(&[0.0], 1).is_err());
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }
}
