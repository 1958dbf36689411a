//! Training losses: sequence cross-entropy and masked cluster prediction.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::config::PAD;
use super::ops::log_softmax_row;

/// Mean negative log-likelihood over non-PAD target positions. Returns the
/// loss and d(loss)/d(logits).
pub fn sequence_loss(logits: &Array2<f64>, targets: &[u32]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != targets.len() {
        return Err(Error::Validation(format!(
            "logits have {} rows for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    let n_active = targets.iter().filter(|&&t| t != PAD).count();
    if n_active == 0 {
        return Err(Error::Validation("all target positions are PAD".into()));
    }
    let scale = 1.0 / n_active as f64;
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, &target) in targets.iter().enumerate() {
        if target == PAD {
            continue;
        }
        let row: Vec<f64> = logits.row(i).to_vec();
        let logp = log_softmax_row(&row);
        loss -= logp[target as usize] * scale;
        for j in 0..row.len() {
            let p = logp[j].exp();
            let indicator = if j == target as usize { 1.0 } else { 0.0 };
            dlogits[[i, j]] = (p - indicator) * scale;
        }
    }
    Ok((loss, dlogits))
}

/// Cross-entropy between the K-way cluster head and the frame targets,
/// averaged over masked frames only. An empty mask is defined as loss 0 with
/// the warning flag set.
pub struct MaskedClusterLoss {
    pub loss: f64,
    pub empty_mask: bool,
    pub dlogits: Array2<f64>,
    pub correct: usize,
    pub masked: usize,
}

pub fn masked_cluster_loss(
    logits: &Array2<f64>,
    targets: &[usize],
    mask: &[bool],
) -> Result<MaskedClusterLoss> {
    let t = logits.nrows();
    let k = logits.ncols();
    if targets.len() != t || mask.len() != t {
        return Err(Error::Validation("targets/mask length mismatch".into()));
    }
    let n_masked = mask.iter().filter(|&&m| m).count();
    let mut dlogits = Array2::zeros(logits.raw_dim());
    if n_masked == 0 {
        return Ok(MaskedClusterLoss {
            loss: 0.0,
            empty_mask: true,
            dlogits,
            correct: 0,
            masked: 0,
        });
    }
    let scale = 1.0 / n_masked as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    for i in 0..t {
        if !mask[i] {
            continue;
        }
        let target = targets[i];
        if target >= k {
            return Err(Error::Validation(format!(
                "cluster target {target} outside [0, {k})"
            )));
        }
        let row: Vec<f64> = logits.row(i).to_vec();
        let logp = log_softmax_row(&row);
        loss -= logp[target] * scale;
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if argmax == target {
            correct += 1;
        }
        for j in 0..k {
            let p = logp[j].exp();
            let indicator = if j == target { 1.0 } else { 0.0 };
            dlogits[[i, j]] = (p - indicator) * scale;
        }
    }
    Ok(MaskedClusterLoss {
        loss,
        empty_mask: false,
        dlogits,
        correct,
        masked: n_masked,
    })
}
