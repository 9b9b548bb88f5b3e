//! Central finite-difference check of the training gradient.
//!
//! The numeric side evaluates the loss through full-frame inference
//! (`predict_all`), which shares no code with the windowed backward pass.

use super::{bce_loss, Ensemble};
use crate::error::{Error, Result};
use crate::types::Transition;

/// Default perturbation for central differences.
pub const STEP: f64 = 1e-4;

/// Gradients smaller than this are compared absolutely rather than
/// relatively; below it the central difference is dominated by rounding.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub params: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Mean loss over heads and batch, computed from full probability maps.
pub fn reference_loss(ensemble: &Ensemble, batch: &[Transition]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let mut total = 0.0;
    for t in batch {
        for map in ensemble.predict_all(&t.scene)? {
            total += bce_loss(map.get(t.action), t.outcome);
        }
    }
    Ok(total / (batch.len() * ensemble.n_heads()) as f64)
}

pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic gradient with central differences on every
/// parameter.
pub fn check(ensemble: &Ensemble, batch: &[Transition], step: f64, floor: f64) -> Result<GradReport> {
    let (_, analytic) = ensemble.loss_and_grad(batch)?;
    let mut probe = ensemble.clone();
    let base = ensemble.params().to_vec();
    let mut report = GradReport { params: base.len(), max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numeric: 0.0 };
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + step;
        probe.set_params(params.clone())?;
        let up = reference_loss(&probe, batch)?;
        params[i] = base[i] - step;
        probe.set_params(params.clone())?;
        let down = reference_loss(&probe, batch)?;
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric, floor);
        if err > report.max_rel_error {
            report = GradReport { max_rel_error: err, worst_index: i, analytic: analytic[i], numeric, ..report };
        }
    }
    Ok(report)
}
