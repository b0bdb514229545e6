//! Central finite-difference verification of taped gradients (64-bit only).

use crate::error::Result;
use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tape::{Tape, Var};

/// Smallest gradient scale used as the relative-error denominator. Central
/// differences at `eps = 1e-6` carry roundoff near `1e-10` on O(1) losses,
/// so relative error is meaningless for gradients much smaller than this.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    /// `max|analytic - numeric| / max(max|analytic|, max|numeric|, SCALE_FLOOR)`.
    pub rel_err: f64,
    pub max_abs_grad: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    /// Frozen parameters that were requested but skipped.
    pub skipped_frozen: Vec<String>,
    /// Frozen parameters that nevertheless received a gradient.
    pub frozen_violations: Vec<String>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.frozen_violations.is_empty() && self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<&ParamCheck> {
        self.params.iter().filter(|p| !p.passed).collect()
    }
}

/// Compare taped gradients of the scalar built by `f` against central
/// differences with step `eps`, parameter by parameter.
///
/// Relative error is measured per tensor against the larger of the two
/// gradient magnitudes, floored at [`SCALE_FLOOR`].
pub fn grad_check<Fn_>(
    store: &mut ParamStore<f64>,
    params: &[ParamId],
    eps: f64,
    tol: f64,
    f: Fn_,
) -> Result<GradCheckReport>
where
    Fn_: for<'s> Fn(&mut Tape<'s, f64>) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        tape.backward(out)?
    };
    let mut report = GradCheckReport {
        params: Vec::new(),
        skipped_frozen: Vec::new(),
        frozen_violations: Vec::new(),
        tol,
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::with_params(store);
        let out = f(&mut tape)?;
        Ok(tape.value(out).item())
    };
    for &id in params {
        let name = store.get(id).name.clone();
        if !store.get(id).trainable {
            if grads.param(id).is_some_and(|g| g.max_abs() != 0.0) {
                report.frozen_violations.push(name.clone());
            }
            report.skipped_frozen.push(name);
            continue;
        }
        let n = store.value(id).numel();
        let analytic: Vec<f64> = match grads.param(id) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; n],
        };
        let mut numeric = vec![0.0; n];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[k] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        let rel_err = diff / scale.max(SCALE_FLOOR);
        report.params.push(ParamCheck {
            name,
            rel_err,
            max_abs_grad: scale,
            passed: rel_err <= tol,
        });
    }
    Ok(report)
}
