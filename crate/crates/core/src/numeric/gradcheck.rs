//! Finite-difference verification of analytic gradients.

use serde::Serialize;

use super::param::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_PERTURBATION: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-8;
const TIGHT_TOLERANCE: f64 = 1e-4;

/// A scalar loss over a parameter store with an analytic gradient.
pub trait Objective {
    fn params(&self) -> &ParamStore;
    /// Loss evaluated at an arbitrary store (used for perturbed copies).
    fn loss_at(&self, params: &ParamStore) -> Result<f64>;
    fn gradients(&self) -> Result<Gradients>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub worst_parameter: String,
    pub num_checked: usize,
    /// Share of checked entries with relative error below 1e-4.
    pub fraction_below_1e4: f64,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_FLOOR)
}

/// `(L(θ+δ) − L(θ−δ)) / 2δ` for one entry, restoring the entry afterwards.
pub fn central_difference(
    store: &mut ParamStore,
    id: ParamId,
    entry: usize,
    delta: f64,
    loss: impl Fn(&ParamStore) -> Result<f64>,
) -> Result<f64> {
    let original = store.get(id).value.values()[entry];
    store.get_mut(id).value.values_mut()[entry] = original + delta;
    let plus = loss(store);
    store.get_mut(id).value.values_mut()[entry] = original - delta;
    let minus = loss(store);
    store.get_mut(id).value.values_mut()[entry] = original;
    let (plus, minus) = (plus?, minus?);
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss while perturbing {}[{entry}]", store.get(id).name)));
    }
    Ok((plus - minus) / (2.0 * delta))
}

pub fn grad_check(objective: &impl Objective, perturbation: f64) -> Result<GradCheckReport> {
    if perturbation <= 0.0 || !perturbation.is_finite() {
        return Err(Error::Config(format!("perturbation must be positive, got {perturbation}")));
    }
    let base = objective.loss_at(objective.params())?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is {base}")));
    }
    let analytic = objective.gradients()?;
    let mut store = objective.params().clone();
    let ids: Vec<ParamId> = store.ids().collect();

    let mut max_rel: f64 = 0.0;
    let mut sum_rel = 0.0;
    let mut below = 0usize;
    let mut worst = String::new();
    let mut checked = 0usize;
    for id in ids {
        let n = store.value(id).values().len();
        for entry in 0..n {
            let numeric = central_difference(&mut store, id, entry, perturbation, |s| objective.loss_at(s))?;
            let a = analytic.get(id).map_or(0.0, |g| g.values()[entry]);
            let err = rel_error(a, numeric);
            if err > max_rel || checked == 0 {
                max_rel = err;
                worst = store.get(id).name.clone();
            }
            if err < TIGHT_TOLERANCE {
                below += 1;
            }
            sum_rel += err;
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        mean_rel_error: if checked == 0 { 0.0 } else { sum_rel / checked as f64 },
        worst_parameter: worst,
        num_checked: checked,
        fraction_below_1e4: if checked == 0 { 1.0 } else { below as f64 / checked as f64 },
    })
}
