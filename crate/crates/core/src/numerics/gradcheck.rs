use super::ParamStore;
use crate::error::{Error, Result};

const REL_FLOOR: f64 = 1e-8;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares analytic gradients against central differences for every entry.
///
/// `objective(params, with_grad)` returns the loss; when `with_grad` is true it
/// must also overwrite `params`' gradient buffers with the analytic gradient.
pub fn grad_check<F>(params: &mut ParamStore, eps: f64, mut objective: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore, bool) -> Result<f64>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("eps {eps} outside (0, 1e-2]")));
    }
    let base = objective(params, true)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("objective at base point".into()));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad().data().to_vec()).collect();

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, entries_checked: 0 };
    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        for k in 0..analytic[pi].len() {
            let original = params.value(id).data()[k];
            params.value_data_mut(id)[k] = original + eps;
            let plus = objective(params, false)?;
            params.value_data_mut(id)[k] = original - eps;
            let minus = objective(params, false)?;
            params.value_data_mut(id)[k] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "objective near {}[{k}]",
                    params.name(id)
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.entries_checked += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((params.name(id).to_string(), k));
            }
        }
    }
    Ok(report)
}
