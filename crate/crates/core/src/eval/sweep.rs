//! Cluster-count sweep: tune a prompt bank per N and score lip-reading WER.

use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, Split, SplitManifest};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::training::{tune_cluster_prompt, Corpus, StageConfig};

use super::report::evaluate_split;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub wer: f64,
}

/// For each N, run cluster-prompt tuning from the same ASR checkpoint and
/// evaluate visual WER on `eval_split`.
pub fn cluster_sweep(
    corpus: &Corpus,
    asr_ckpt: &Checkpoint,
    split: &SplitManifest,
    ns: &[usize],
    eval_split: Split,
    base_cfg: &StageConfig,
    beam_size: usize,
) -> Result<Vec<SweepPoint>> {
    if ns.is_empty() {
        return Err(Error::Validation("cluster sweep needs at least one N".into()));
    }
    let mut points = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut scfg = base_cfg.clone();
        scfg.prompt_clusters = Some(n);
        let outcome = tune_cluster_prompt(corpus, asr_ckpt.clone(), split, &scfg)?;
        let report = evaluate_split(
            &outcome.checkpoint,
            &corpus.manifest,
            eval_split,
            Modality::Visual,
            beam_size,
        )?;
        points.push(SweepPoint { n, wer: report.wer });
    }
    Ok(points)
}
