//! Split evaluation and the serialized WER report.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_features, CorpusManifest, ManifestRecord, Modality, Split};
use crate::error::{Error, Result};
use crate::io;
use crate::model::Checkpoint;

use super::beam::{beam_decode, EvalContext};
use super::wer::wer;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UttEval {
    pub id: String,
    pub reference: Vec<String>,
    pub hypothesis: Vec<String>,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_id: String,
    pub split: Split,
    pub modality: Modality,
    pub beam_size: usize,
    pub max_len: usize,
    pub utterances: Vec<UttEval>,
    pub total_substitutions: usize,
    pub total_deletions: usize,
    pub total_insertions: usize,
    pub total_reference_len: usize,
    pub wer: f64,
}

impl EvalReport {
    /// Recompute the aggregate from the stored per-utterance counts.
    pub fn recompute_wer(&self) -> f64 {
        let s: usize = self.utterances.iter().map(|u| u.substitutions).sum();
        let d: usize = self.utterances.iter().map(|u| u.deletions).sum();
        let i: usize = self.utterances.iter().map(|u| u.insertions).sum();
        let m: usize = self.utterances.iter().map(|u| u.reference_len).sum();
        (s + d + i) as f64 / m.max(1) as f64
    }

    pub fn save(&self, json_path: &Path) -> Result<()> {
        io::write_json(json_path, self)
    }

    pub fn load(json_path: &Path) -> Result<EvalReport> {
        io::read_json(json_path)
    }

    /// Human-readable summary table.
    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "checkpoint {}  split {}  modality {}  beam {}",
            self.checkpoint_id,
            self.split.as_str(),
            self.modality.as_str(),
            self.beam_size
        );
        let _ = writeln!(
            out,
            "WER {:.4}  (S={} D={} I={} M={})  utterances {}",
            self.wer,
            self.total_substitutions,
            self.total_deletions,
            self.total_insertions,
            self.total_reference_len,
            self.utterances.len()
        );
        let _ = writeln!(out, "{:<10} {:>3} {:>3} {:>3} {:>4}  text", "id", "S", "D", "I", "M");
        for u in &self.utterances {
            let _ = writeln!(
                out,
                "{:<10} {:>3} {:>3} {:>3} {:>4}  ref: {} | hyp: {}",
                u.id,
                u.substitutions,
                u.deletions,
                u.insertions,
                u.reference_len,
                u.reference.join(" "),
                u.hypothesis.join(" ")
            );
        }
        out
    }
}

fn aggregate(
    checkpoint_id: String,
    split: Split,
    modality: Modality,
    beam_size: usize,
    max_len: usize,
    utterances: Vec<UttEval>,
) -> EvalReport {
    let s: usize = utterances.iter().map(|u| u.substitutions).sum();
    let d: usize = utterances.iter().map(|u| u.deletions).sum();
    let i: usize = utterances.iter().map(|u| u.insertions).sum();
    let m: usize = utterances.iter().map(|u| u.reference_len).sum();
    EvalReport {
        checkpoint_id,
        split,
        modality,
        beam_size,
        max_len,
        utterances,
        total_substitutions: s,
        total_deletions: d,
        total_insertions: i,
        total_reference_len: m,
        wer: (s + d + i) as f64 / m.max(1) as f64,
    }
}

/// `max_len = 2 x median reference length` of the split being scored.
pub fn default_max_len(records: &[&ManifestRecord]) -> usize {
    let mut lens: Vec<usize> = records.iter().map(|r| r.words.len()).collect();
    if lens.is_empty() {
        return 4;
    }
    lens.sort_unstable();
    let median = lens[lens.len() / 2];
    (2 * median).max(4)
}

/// Score a split with an arbitrary decoder. Used directly by tests (oracle
/// stubs) and by `evaluate_split` with the real beam decoder.
pub fn evaluate_with_decoder<F>(
    checkpoint_id: String,
    manifest: &CorpusManifest,
    split: Split,
    modality: Modality,
    beam_size: usize,
    max_len: usize,
    decode: F,
) -> Result<EvalReport>
where
    F: Fn(&ManifestRecord) -> Result<Vec<String>> + Sync,
{
    let records = manifest.split(split);
    if records.is_empty() {
        return Err(Error::Validation(format!("split {} is empty", split.as_str())));
    }
    let results: Vec<Result<UttEval>> = records
        .par_iter()
        .map(|rec| -> Result<UttEval> {
            let hypothesis = decode(rec)?;
            let counts = wer(&rec.words, &hypothesis)?;
            Ok(UttEval {
                id: rec.id.clone(),
                reference: rec.words.clone(),
                hypothesis,
                substitutions: counts.substitutions,
                deletions: counts.deletions,
                insertions: counts.insertions,
                reference_len: counts.reference_len,
            })
        })
        .collect();
    // Surface the first failure in manifest order so errors are stable.
    let mut utterances = Vec::with_capacity(results.len());
    for r in results {
        utterances.push(r?);
    }
    Ok(aggregate(
        checkpoint_id,
        split,
        modality,
        beam_size,
        max_len,
        utterances,
    ))
}

/// Decode every utterance of a split under the requested modality routing
/// and aggregate WER. Only the routed feature files are ever read.
pub fn evaluate_split(
    ckpt: &Checkpoint,
    manifest: &CorpusManifest,
    split: Split,
    modality: Modality,
    beam_size: usize,
) -> Result<EvalReport> {
    let ctx = EvalContext::new(ckpt);
    let records = manifest.split(split);
    let max_len = default_max_len(&records);
    evaluate_with_decoder(
        ckpt.short_id(),
        manifest,
        split,
        modality,
        beam_size,
        max_len,
        |rec| {
            let feats = load_features(&manifest.base_dir, rec, modality)?;
            beam_decode(&ctx, &feats, beam_size, max_len)
        },
    )
}
