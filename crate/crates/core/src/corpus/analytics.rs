//! Word-distribution analytics: TF tables, common-word splits, top-k IoU and
//! cross-domain term counts.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

use super::generate::{CorpusManifest, Split};

pub type TfTable = BTreeMap<String, u64>;

/// Count every token occurrence in the split's transcripts.
pub fn word_frequency_table(manifest: &CorpusManifest, split: &str) -> Result<TfTable> {
    let split = Split::parse(split)?;
    let mut table = TfTable::new();
    for rec in manifest.split(split) {
        for w in &rec.words {
            *table.entry(w.clone()).or_default() += 1;
        }
    }
    Ok(table)
}

/// Training subset retaining only utterances whose words all clear the TF
/// threshold; val/test pass through unfiltered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub parent: String,
    pub tf_threshold: u64,
    pub retained_ids: Vec<String>,
    pub retained_vocab: Vec<String>,
    /// Provenance hash of the run that produced the file, when emitted by
    /// the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_record_hash: Option<String>,
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<SplitManifest> {
        io::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Retain exactly the training utterances in which every word has TF >
/// threshold, with TF measured on the full train split.
pub fn common_word_split(manifest: &CorpusManifest, tf_threshold: u64) -> Result<SplitManifest> {
    let tf = word_frequency_table(manifest, "train")?;
    let retained_vocab: Vec<String> = tf
        .iter()
        .filter(|(_, &c)| c > tf_threshold)
        .map(|(w, _)| w.clone())
        .collect();
    let vocab_set: HashSet<&String> = retained_vocab.iter().collect();
    let retained_ids = manifest
        .split(Split::Train)
        .into_iter()
        .filter(|rec| rec.words.iter().all(|w| vocab_set.contains(w)))
        .map(|rec| rec.id.clone())
        .collect();
    Ok(SplitManifest {
        parent: manifest.base_dir.to_string_lossy().into_owned(),
        tf_threshold,
        retained_ids,
        retained_vocab,
        run_record_hash: None,
    })
}

/// Top-k words under deterministic ordering: count descending, then word
/// ascending.
fn top_k(table: &TfTable, k: usize) -> Vec<&String> {
    let mut entries: Vec<(&String, u64)> = table.iter().map(|(w, &c)| (w, c)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    entries.into_iter().take(k).map(|(w, _)| w).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouPoint {
    pub k: usize,
    pub k_used_a: usize,
    pub k_used_b: usize,
    pub clamped: bool,
    pub iou: f64,
}

/// Intersection-over-union of the top-k vocabularies of two TF tables.
/// A `k` larger than a table is clamped to that table's size and recorded.
pub fn vocab_iou_at_topk(tf_a: &TfTable, tf_b: &TfTable, ks: &[usize]) -> Result<Vec<IouPoint>> {
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 {
            return Err(Error::Validation("top-k requires k >= 1".into()));
        }
        let k_a = k.min(tf_a.len());
        let k_b = k.min(tf_b.len());
        let ta: HashSet<&String> = top_k(tf_a, k_a).into_iter().collect();
        let tb: HashSet<&String> = top_k(tf_b, k_b).into_iter().collect();
        let inter = ta.intersection(&tb).count();
        let union = ta.union(&tb).count();
        let iou = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
        out.push(IouPoint {
            k,
            k_used_a: k_a,
            k_used_b: k_b,
            clamped: k_a != k || k_b != k,
            iou,
        });
    }
    Ok(out)
}

/// Number of words in `tf_a`'s vocabulary with tf_a >= k_a whose count in
/// `tf_b` (0 when absent) is <= k_b.
pub fn cross_domain_term_counts(tf_a: &TfTable, tf_b: &TfTable, k_a: u64, k_b: u64) -> usize {
    tf_a.iter()
        .filter(|(w, &ca)| ca >= k_a && tf_b.get(*w).copied().unwrap_or(0) <= k_b)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::ManifestRecord;
    use std::path::PathBuf;

    fn manifest_from_transcripts(train: &[&str], val: &[&str]) -> CorpusManifest {
        let mut records = Vec::new();
        let mut push = |words: &str, split: Split, i: usize| {
            records.push(ManifestRecord {
                id: format!("{}{i:03}", split.as_str()),
                domain: "d".into(),
                split,
                words: words.split_whitespace().map(String::from).collect(),
                phonemes: vec![],
                audio_path: String::new(),
                visual_path: String::new(),
                n_frames: 1,
            });
        };
        for (i, t) in train.iter().enumerate() {
            push(t, Split::Train, i);
        }
        for (i, t) in val.iter().enumerate() {
            push(t, Split::Val, i);
        }
        CorpusManifest {
            records,
            base_dir: PathBuf::from("."),
        }
    }

    #[test]
    fn tf_counts_tokens() {
        let m = manifest_from_transcripts(&["a a b", "a c"], &[]);
        let tf = word_frequency_table(&m, "train").unwrap();
        assert_eq!(tf.get("a"), Some(&3));
        assert_eq!(tf.get("b"), Some(&1));
        assert_eq!(tf.get("c"), Some(&1));
        let total: u64 = tf.values().sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn tf_empty_split_and_unknown_split() {
        let m = manifest_from_transcripts(&["a"], &[]);
        assert!(word_frequency_table(&m, "test").unwrap().is_empty());
        assert!(matches!(
            word_frequency_table(&m, "bogus"),
            Err(Error::UnknownSplit(_))
        ));
    }

    #[test]
    fn common_split_matches_hand_rule() {
        let m = manifest_from_transcripts(&["a a a a", "a b"], &[]);
        let s = common_word_split(&m, 1).unwrap();
        assert_eq!(s.retained_ids, vec!["train000"]);
        assert_eq!(s.retained_vocab, vec!["a"]);

        let all = common_word_split(&m, 0).unwrap();
        assert_eq!(all.retained_ids.len(), 2);

        let none = common_word_split(&m, 5).unwrap();
        assert!(none.retained_ids.is_empty());
    }

    #[test]
    fn common_split_predicate_rescan() {
        let m = manifest_from_transcripts(&["a a b", "b c c", "a c a", "d d d d"], &[]);
        for thr in 0..6 {
            let s = common_word_split(&m, thr).unwrap();
            let tf = word_frequency_table(&m, "train").unwrap();
            for id in &s.retained_ids {
                let rec = m.record(id).unwrap();
                for w in &rec.words {
                    assert!(tf[w] > thr, "threshold {thr}: word {w} slipped through");
                }
            }
            // And the complement violates the predicate.
            for rec in m.split(Split::Train) {
                if !s.retained_ids.contains(&rec.id) {
                    assert!(rec.words.iter().any(|w| tf[w] <= thr));
                }
            }
        }
    }

    #[test]
    fn iou_identity_disjoint_and_hand_case() {
        let a: TfTable = [("x", 5u64), ("y", 3), ("z", 1)]
            .into_iter()
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        let b: TfTable = [("x", 4u64), ("w", 9), ("y", 1)]
            .into_iter()
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        let identical = vocab_iou_at_topk(&a, &a, &[1, 2, 3]).unwrap();
        assert!(identical.iter().all(|p| p.iou == 1.0));

        let disjoint_b: TfTable = [("q", 2u64)].into_iter().map(|(w, c)| (w.to_string(), c)).collect();
        let d = vocab_iou_at_topk(&a, &disjoint_b, &[1]).unwrap();
        assert_eq!(d[0].iou, 0.0);

        // top2(a) = {x, y}; top2(b) = {w, x}; IoU = 1/3.
        let hand = vocab_iou_at_topk(&a, &b, &[2]).unwrap();
        assert!((hand[0].iou - 1.0 / 3.0).abs() < 1e-12);
        assert!(!hand[0].clamped);

        let clamped = vocab_iou_at_topk(&a, &b, &[10]).unwrap();
        assert!(clamped[0].clamped);
        assert_eq!(clamped[0].k_used_a, 3);
    }

    #[test]
    fn cross_domain_counts() {
        let a: TfTable = [("x", 12u64)].into_iter().map(|(w, c)| (w.to_string(), c)).collect();
        let b = TfTable::new();
        assert_eq!(cross_domain_term_counts(&a, &b, 10, 10), 1);

        let a2: TfTable = [("x", 3u64), ("y", 8), ("z", 1)]
            .into_iter()
            .map(|(w, c)| (w.to_string(), c))
            .collect();
        assert_eq!(cross_domain_term_counts(&a2, &b, 0, u64::MAX), 3);
        // k_a above every TF leaves nothing.
        assert_eq!(cross_domain_term_counts(&a2, &a2, 9, 0), 0);
    }
}
