//! Parameter accounting by freeze mask.

use serde::{Deserialize, Serialize};

use crate::model::Checkpoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunableCount {
    pub tunable: usize,
    pub total: usize,
    pub ratio: f64,
}

/// Count scalar parameters by the checkpoint's freeze mask.
pub fn count_tunable(ckpt: &Checkpoint) -> TunableCount {
    let mut tunable = 0usize;
    let mut total = 0usize;
    for (name, tensor) in ckpt.params.iter() {
        total += tensor.len();
        if ckpt.freeze.is_tunable(name) {
            tunable += tensor.len();
        }
    }
    TunableCount {
        tunable,
        total,
        ratio: tunable as f64 / total.max(1) as f64,
    }
}

/// Closed-form size of a cluster-prompt bank: per encoder layer, an N x D
/// cluster table plus a D -> N Meta map with bias.
pub fn prompt_param_formula(encoder_layers: usize, n: usize, d: usize) -> usize {
    encoder_layers * (2 * n * d + n)
}
