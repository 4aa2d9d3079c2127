//! Central finite-difference verification of analytic gradients.

use super::grads::parameter_mut;
use super::{Gradients, NnError, Parameterized};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error at that scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat parameter index of the worst coordinate.
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `analytic` against `(L(θ+h) − L(θ−h)) / 2h` for every parameter.
pub fn finite_diff_check<M, F>(
    model: &M,
    loss: F,
    analytic: &Gradients,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport, NnError>
where
    M: Parameterized + Clone,
    F: Fn(&M) -> Result<f64, NnError>,
{
    if !(step > 0.0) {
        return Err(NnError::Config("finite-difference step must be positive"));
    }
    if !analytic.is_congruent_with(&model.layers()) {
        return Err(NnError::Incongruent);
    }
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: 0,
        passed: true,
    };
    for (idx, &a) in analytic.values().enumerate() {
        let original = *parameter_mut(probe.layers_mut(), idx).expect("index in range");
        *parameter_mut(probe.layers_mut(), idx).unwrap() = original + step;
        let plus = loss(&probe)?;
        *parameter_mut(probe.layers_mut(), idx).unwrap() = original - step;
        let minus = loss(&probe)?;
        *parameter_mut(probe.layers_mut(), idx).unwrap() = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NnError::NonFinite("loss"));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(a, numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = idx;
        }
        report.checked += 1;
    }
    report.passed = report.max_relative_error <= tol;
    Ok(report)
}
