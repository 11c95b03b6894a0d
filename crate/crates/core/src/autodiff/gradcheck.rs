//! Central finite-difference check of tape gradients.

use crate::autodiff::params::{Bound, ParamStore};
use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Magnitude below which both gradients count as zero; relative error is
    /// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// Upper bound on entries probed per parameter (evenly strided); `None` probes all.
    pub max_entries: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

/// Compares backward gradients of the scalar built by `loss` against central
/// differences `(f(x + h) - f(x - h)) / 2h` on every parameter entry.
///
/// `loss` must be deterministic: it is evaluated twice at the base point and
/// an error is returned if the values differ.
pub fn grad_check<T, F>(
    store: &ParamStore<T>,
    mut loss: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, &Bound) -> Result<Var>,
{
    if !(config.step > 0.0) || !config.step.is_finite() {
        return Err(Error::GradCheck(format!(
            "step must be positive, got {}",
            config.step
        )));
    }
    let analytic = {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let out = loss(&mut tape, &bound)?;
        let base = tape.value(out).item().to_f64_lossy();
        let mut grads = tape.backward(out)?;
        let grads = bound.collect(store, &mut grads);
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let out = loss(&mut tape, &bound)?;
        let again = tape.value(out).item().to_f64_lossy();
        if base.to_bits() != again.to_bits() {
            return Err(Error::GradCheck(format!(
                "loss closure is nondeterministic: {base} then {again}"
            )));
        }
        grads
    };

    let mut eval = |s: &ParamStore<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape);
        let out = loss(&mut tape, &bound)?;
        Ok(tape.value(out).item().to_f64_lossy())
    };
    let h = config.step;
    let mut work = store.clone();
    let mut report = Vec::with_capacity(store.len());
    for (k, id) in store.ids().enumerate() {
        let n = store.value(id).len();
        let stride = config
            .max_entries
            .map_or(1, |m| n.div_ceil(m.max(1)).max(1));
        let mut check = ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            checked: 0,
        };
        for e in (0..n).step_by(stride) {
            let orig = store.value(id).as_slice()[e];
            work.value_mut(id).as_mut_slice()[e] = orig + T::from_f64_lossy(h);
            let plus = eval(&work)?;
            work.value_mut(id).as_mut_slice()[e] = orig - T::from_f64_lossy(h);
            let minus = eval(&work)?;
            work.value_mut(id).as_mut_slice()[e] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k].as_slice()[e].to_f64_lossy();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(config.floor);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.checked += 1;
        }
        report.push(check);
    }
    Ok(GradCheckReport { params: report })
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::matrix::Matrix;

    fn linear_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add(
            "w",
            Matrix::from_fn(3, 2, |i, j| 0.1 * (i as f64) - 0.2 * (j as f64) + 0.05),
            true,
        );
        s
    }

    fn linear_loss(tape: &mut Tape<f64>, bound: &Bound) -> Result<Var> {
        let x = tape.constant(Matrix::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * 0.3));
        let w = bound.var(crate::autodiff::params::ParamId(0));
        let y = tape.matmul(x, w)?;
        Ok(tape.sum(y))
    }

    #[test]
    fn linear_model_is_exact() {
        let store = linear_store();
        let report = grad_check(&store, linear_loss, &GradCheckConfig::default()).unwrap();
        assert!(report.max_rel_error() < 1e-8, "{report:?}");
        assert_eq!(report.params[0].checked, 6);
    }

    #[test]
    fn zero_step_rejected() {
        let store = linear_store();
        let cfg = GradCheckConfig {
            step: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            grad_check(&store, linear_loss, &cfg),
            Err(Error::GradCheck(_))
        ));
    }

    #[test]
    fn nondeterminism_detected() {
        let store = linear_store();
        let calls = Cell::new(0.0);
        let noisy = |tape: &mut Tape<f64>, bound: &Bound| {
            calls.set(calls.get() + 1.0);
            let base = linear_loss(tape, bound)?;
            let bump = tape.constant(Matrix::scalar(calls.get()));
            tape.add(base, bump)
        };
        assert!(matches!(
            grad_check(&store, noisy, &GradCheckConfig::default()),
            Err(Error::GradCheck(_))
        ));
    }
}
