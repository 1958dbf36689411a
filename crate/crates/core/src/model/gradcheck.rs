//! Finite-difference verification of analytic gradients.
//!
//! The check perturbs every parameter scalar by ±step, re-evaluates the loss
//! in f64, and compares the central difference against the backward pass.
//! Parameters a loss does not touch shift it by exactly zero, so the check
//! can sweep the whole store for any loss.

use std::collections::BTreeMap;

use super::params::{GradStore, ParameterStore};

/// Error denominator floor: relative comparison above this magnitude,
/// absolute (|a - f| < 1e-10) below it, which keeps zero-gradient parameters
/// from dividing by zero.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst relative error per parameter group.
    pub per_group: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    pub scalars_checked: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> (String, f64) {
        self.per_group
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(g, &e)| (g.clone(), e))
            .unwrap_or_default()
    }
}

/// Compare `analytic` gradients against central finite differences of
/// `loss_fn` over every scalar in the store. The central difference at
/// `step` is Richardson-extrapolated with the half step, cancelling the
/// O(step^2) truncation term so the oracle itself is accurate to ~1e-11 and
/// the relative comparison measures only the backward pass.
pub fn finite_difference_check(
    store: &ParameterStore,
    analytic: &GradStore,
    step: f64,
    loss_fn: impl Fn(&ParameterStore) -> f64,
) -> GradCheckReport {
    let mut work = store.clone();
    let names: Vec<String> = store.names().cloned().collect();
    let mut per_group: BTreeMap<String, f64> = BTreeMap::new();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;

    for name in &names {
        let dims = store.p(name).dim();
        let group = ParameterStore::group_of(name);
        for i in 0..dims.0 {
            for j in 0..dims.1 {
                let orig = store.p(name)[[i, j]];
                let mut central = |h: f64| -> f64 {
                    work.get_mut(name).unwrap()[[i, j]] = orig + h;
                    let up = loss_fn(&work);
                    work.get_mut(name).unwrap()[[i, j]] = orig - h;
                    let down = loss_fn(&work);
                    work.get_mut(name).unwrap()[[i, j]] = orig;
                    (up - down) / (2.0 * h)
                };
                let coarse = central(step);
                let fine = central(step / 2.0);
                let fd = (4.0 * fine - coarse) / 3.0;
                let an = analytic.get(name).map(|g| g[[i, j]]).unwrap_or(0.0);
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(GRAD_FLOOR);
                let entry = per_group.entry(group.clone()).or_insert(0.0);
                if rel > *entry {
                    *entry = rel;
                }
                if rel > max_rel {
                    max_rel = rel;
                }
                checked += 1;
            }
        }
    }
    GradCheckReport {
        per_group,
        max_rel_err: max_rel,
        scalars_checked: checked,
    }
}
