//! Adam and the warmup/decay learning-rate schedule.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::model::{FreezeMask, GradStore, ParameterStore};

/// Linear warmup to the peak over the warmup span, then linear decay to 0 at
/// `total_steps`. With warmup_fraction = 1 the decay span is empty and the
/// schedule ends at the peak.
pub fn lr_schedule(step: usize, total_steps: usize, peak: f64, warmup_fraction: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let warmup = (total_steps as f64 * warmup_fraction).max(1.0);
    let s = step as f64;
    if s <= warmup {
        peak * s / warmup
    } else {
        let decay_span = total_steps as f64 - warmup;
        if decay_span <= 0.0 {
            peak
        } else {
            peak * ((total_steps as f64 - s) / decay_span).max(0.0)
        }
    }
}

/// Adam over the tunable subset of the store. Frozen parameters receive no
/// update and hold no optimizer state.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParameterStore,
        grads: &GradStore,
        freeze: &FreezeMask,
        lr: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, grad) in grads.iter() {
            if !freeze.is_tunable(name) {
                continue;
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(grad.raw_dim()));
            let param = store
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter `{name}`"));
            for ((p, g), (mi, vi)) in param
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new()
    }
}
