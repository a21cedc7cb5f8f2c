use super::layered::LayeredVector;
use super::model::{forward, loss, loss_and_grad, Batch, ModelSpec};
use crate::error::{Error, Result};

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat parameter index of the worst relative deviation.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic gradients to central differences `(f(w+h) - f(w-h)) / 2h`
/// on every coordinate.
pub fn finite_difference_check(
    model: &ModelSpec,
    weights: &LayeredVector,
    batch: &Batch,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let analytic = loss_and_grad(model, weights, batch)?.grad;
    let eval = |w: &LayeredVector| -> Result<f64> {
        let logits = forward(model, w, batch)?;
        loss(&logits, batch.labels())
    };

    let mut probe = weights.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        tolerance: tol,
        passed: false,
    };
    for i in 0..weights.total_dim() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.as_mut_slice()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.as_mut_slice()[i] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.as_slice()[i];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
