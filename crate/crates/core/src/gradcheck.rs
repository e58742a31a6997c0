//! Finite-difference gradient checking for hand-written backward passes.

use alloc::format;
use alloc::string::String;

use crate::store::ParamStore;

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all parameter elements.
    pub max_rel_err: f64,
    /// Parameter holding the worst element.
    pub worst_param: String,
    /// Flat index of the worst element within that parameter.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Set when the objective evaluated to a non-finite value; names the
    /// perturbation at which it happened.
    pub non_finite_at: Option<String>,
    pub passed: bool,
}

/// Compares the analytic gradients stored in `store` against central
/// differences of `f` for every parameter element.
///
/// The caller runs forward + backward first so that every gradient buffer
/// is populated; `f` must be a deterministic function of the store's
/// parameter values. Relative error per element is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`, which behaves as
/// an absolute tolerance when gradients are small. The check passes when
/// the maximum relative error stays below `tol` and every objective
/// evaluation is finite.
pub fn grad_check<F>(
    mut f: F,
    store: &mut ParamStore,
    epsilon: f32,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let names: alloc::vec::Vec<String> = store.names().map(String::from).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        non_finite_at: None,
        passed: true,
    };

    for name in &names {
        let n = store.tensor(name).numel();
        for idx in 0..n {
            let original = store.tensor(name).data()[idx];
            let analytic = store
                .tensor(name)
                .grad()
                .map(|g| g[idx] as f64)
                .unwrap_or(0.0);

            // Parameters are f32, so the applied step is the rounded value;
            // divide by the realized interval rather than the nominal 2*eps.
            let w_plus = original + epsilon;
            let w_minus = original - epsilon;
            store.get_mut(name).unwrap().data_mut()[idx] = w_plus;
            let f_plus = f(store);
            store.get_mut(name).unwrap().data_mut()[idx] = w_minus;
            let f_minus = f(store);
            store.get_mut(name).unwrap().data_mut()[idx] = original;

            if !f_plus.is_finite() || !f_minus.is_finite() {
                report.non_finite_at = Some(format!("{name}[{idx}]"));
                report.passed = false;
                return report;
            }

            let numeric = (f_plus - f_minus) / (w_plus as f64 - w_minus as f64);
            let denom = 1.0f64.max(analytic.abs()).max(numeric.abs());
            let rel = (analytic - numeric).abs() / denom;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = name.clone();
                report.worst_index = idx;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }

    report.passed = report.max_rel_err < tol;
    report
}
