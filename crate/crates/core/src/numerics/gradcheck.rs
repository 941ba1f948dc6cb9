use rand::seq::index;

use super::params::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::seed;

/// Entries checked exhaustively up to this count; above it a seeded sample.
pub const FULL_CHECK_LIMIT: usize = 10_000;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param: String,
    pub entry: usize,
    pub checked: usize,
    /// Entries whose perturbation straddles a kink (ReLU, hinge, abs): the
    /// forward and backward one-sided slopes disagree, so the entry is
    /// excluded.
    pub skipped_kinks: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares `analytic` with central differences of `loss_fn` for every
/// parameter entry (or a seeded sample of [`FULL_CHECK_LIMIT`] entries).
pub fn grad_check(
    params: &ParamStore,
    analytic: &Gradients,
    loss_fn: impl Fn(&ParamStore) -> Result<f64>,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(1e-5..=1e-2).contains(&epsilon) {
        return Err(Error::domain("epsilon", "must be in [1e-5, 1e-2]"));
    }
    let mut slots = Vec::new();
    for id in params.ids() {
        for e in 0..params.value(id).len() {
            slots.push((id, e));
        }
    }
    let picked: Vec<usize> = if slots.len() > FULL_CHECK_LIMIT {
        let mut v = index::sample(&mut seed::rng(seed), slots.len(), FULL_CHECK_LIMIT).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..slots.len()).collect()
    };
    let mut work = params.clone();
    let eval = |store: &ParamStore| -> Result<f64> {
        let l = loss_fn(store)?;
        if !l.is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        Ok(l)
    };
    let base = eval(params)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        param: String::new(),
        entry: 0,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in picked {
        let (id, e) = slots[i];
        let a = analytic.get(id).map_or(0.0, |g| g.as_slice().expect("contiguous")[e]);
        let orig = work.value(id).as_slice().expect("contiguous")[e];
        work.value_mut(id).as_slice_mut().expect("contiguous")[e] = orig + epsilon;
        let up = eval(&work)?;
        work.value_mut(id).as_slice_mut().expect("contiguous")[e] = orig - epsilon;
        let down = eval(&work)?;
        work.value_mut(id).as_slice_mut().expect("contiguous")[e] = orig;
        let n = (up - down) / (2.0 * epsilon);
        let err = rel_error(a, n);
        if err > 1e-6 {
            // one-sided slopes disagree: a kink lies inside [x - eps, x + eps]
            let forward = (up - base) / epsilon;
            let backward = (base - down) / epsilon;
            let gap = (forward - backward).abs();
            if gap > (0.1 * forward.abs().max(backward.abs())).max(1e-5) {
                report.skipped_kinks += 1;
                continue;
            }
        }
        report.checked += 1;
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.param = params.name(id).to_owned();
            report.entry = e;
        }
    }
    Ok(report)
}
