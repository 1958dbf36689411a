//! Homophene confusion analysis over an evaluation report.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Lexicon, VisemeMap};
use crate::error::Result;

use super::report::EvalReport;
use super::wer::{wer_align, AlignOp};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSubstitution {
    pub reference: String,
    pub hypothesis: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfusionReport {
    /// Substitutions where the hypothesis word is a homophene of the
    /// reference word at the aligned position.
    pub pair_substitutions: Vec<PairSubstitution>,
    /// Reference tokens that belong to some homophene pair / that do not.
    pub homophene_ref_tokens: u64,
    pub other_ref_tokens: u64,
    /// How many of each were substituted (by anything).
    pub homophene_substituted: u64,
    pub other_substituted: u64,
    pub homophene_sub_rate: f64,
    pub other_sub_rate: f64,
    /// WER restricted to utterances containing / not containing homophene
    /// words. None when the subset is empty.
    pub wer_homophene_utts: Option<f64>,
    pub wer_other_utts: Option<f64>,
}

/// Count aligned homophene substitutions and per-class substitution rates.
pub fn confusion_report(
    report: &EvalReport,
    lexicon: &Lexicon,
    viseme_map: &VisemeMap,
) -> Result<ConfusionReport> {
    let homophene_words: HashSet<String> = lexicon.homophene_words(viseme_map);
    let is_pair = |a: &str, b: &str| -> bool {
        match (lexicon.phonemes_of(a), lexicon.phonemes_of(b)) {
            (Some(pa), Some(pb)) => {
                pa != pb && viseme_map.viseme_seq(pa) == viseme_map.viseme_seq(pb)
            }
            _ => false,
        }
    };

    let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut homophene_ref_tokens = 0u64;
    let mut other_ref_tokens = 0u64;
    let mut homophene_substituted = 0u64;
    let mut other_substituted = 0u64;
    let mut h_edits = 0u64;
    let mut h_m = 0u64;
    let mut o_edits = 0u64;
    let mut o_m = 0u64;

    for utt in &report.utterances {
        let (counts, ops) = wer_align(&utt.reference, &utt.hypothesis)?;
        let mut substituted = vec![false; utt.reference.len()];
        for op in &ops {
            if let AlignOp::Substitute { ref_pos, hyp_pos } = op {
                substituted[*ref_pos] = true;
                let r = &utt.reference[*ref_pos];
                let h = &utt.hypothesis[*hyp_pos];
                if is_pair(r, h) {
                    *pair_counts.entry((r.clone(), h.clone())).or_default() += 1;
                }
            }
        }
        for (i, word) in utt.reference.iter().enumerate() {
            if homophene_words.contains(word) {
                homophene_ref_tokens += 1;
                if substituted[i] {
                    homophene_substituted += 1;
                }
            } else {
                other_ref_tokens += 1;
                if substituted[i] {
                    other_substituted += 1;
                }
            }
        }
        let has_homophene = utt.reference.iter().any(|w| homophene_words.contains(w));
        if has_homophene {
            h_edits += counts.edits() as u64;
            h_m += counts.reference_len as u64;
        } else {
            o_edits += counts.edits() as u64;
            o_m += counts.reference_len as u64;
        }
    }

    Ok(ConfusionReport {
        pair_substitutions: pair_counts
            .into_iter()
            .map(|((reference, hypothesis), count)| PairSubstitution {
                reference,
                hypothesis,
                count,
            })
            .collect(),
        homophene_ref_tokens,
        other_ref_tokens,
        homophene_substituted,
        other_substituted,
        homophene_sub_rate: homophene_substituted as f64 / homophene_ref_tokens.max(1) as f64,
        other_sub_rate: other_substituted as f64 / other_ref_tokens.max(1) as f64,
        wer_homophene_utts: (h_m > 0).then(|| h_edits as f64 / h_m as f64),
        wer_other_utts: (o_m > 0).then(|| o_edits as f64 / o_m as f64),
    })
}
