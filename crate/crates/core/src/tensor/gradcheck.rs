//! Central finite differences for checking reverse-mode gradients.

use alloc::string::String;

use super::{NodeId, ParamStore, Tape};
use crate::error::Error;

/// Denominator floor of [`relative_error`], so that gradients that are zero
/// up to rounding are compared absolutely.
pub const ERROR_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradCheck {
    /// Number of scalar values compared.
    pub checked: usize,
    /// The value with the largest relative error.
    pub worst: Option<Discrepancy>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_error)
    }
}

/// Compares the tape gradient of `loss` with central differences of step
/// `h` for every value of every trainable parameter. `loss` is evaluated on
/// eval-mode tapes, so dropout must not matter.
pub fn check_gradients<F>(params: &ParamStore, h: f64, loss: F) -> Result<GradCheck, Error>
where
    F: Fn(&mut Tape<'_>) -> Result<NodeId, Error>,
{
    let value = |p: &ParamStore| -> Result<f64, Error> {
        let mut tape = Tape::eval(p);
        let out = loss(&mut tape)?;
        Ok(tape.value(out).item())
    };
    let grads = {
        let mut tape = Tape::eval(params);
        let out = loss(&mut tape)?;
        tape.backward(out)?
    };
    let mut probe = params.clone();
    let mut report = GradCheck::default();
    for (id, param) in params.iter() {
        if !param.requires_grad {
            continue;
        }
        for k in 0..param.value.len() {
            let x = param.value.data()[k];
            probe.value_mut(id).data_mut()[k] = x + h;
            let up = value(&probe)?;
            probe.value_mut(id).data_mut()[k] = x - h;
            let down = value(&probe)?;
            probe.value_mut(id).data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
            let rel_error = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.as_ref().map_or(true, |w| rel_error > w.rel_error) {
                report.worst = Some(Discrepancy { param: param.name.clone(), index: k, analytic, numeric, rel_error });
            }
        }
    }
    Ok(report)
}
