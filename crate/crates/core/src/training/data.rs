//! In-memory training data and deterministic batch scheduling.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{load_features, CorpusManifest, LexiconFile, Modality, Split};
use crate::error::Result;
use crate::model::Vocab;

/// A corpus opened for training or evaluation.
#[derive(Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
    pub lexicon: LexiconFile,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Corpus> {
        let manifest = CorpusManifest::load(dir)?;
        let lexicon = LexiconFile::load(dir)?;
        Ok(Corpus {
            dir: dir.to_path_buf(),
            manifest,
            lexicon,
        })
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.lexicon.lexicon.words())
    }
}

/// One utterance held in memory. Only the requested modalities are loaded.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub words: Vec<String>,
    /// Word ids terminated by EOS.
    pub targets: Vec<u32>,
    pub audio: Option<Array2<f64>>,
    pub visual: Option<Array2<f64>>,
}

/// Load a split into memory with modality routing; `ids` restricts to a
/// subset (e.g., a common-word SplitManifest).
pub fn load_split_items(
    corpus: &Corpus,
    split: Split,
    modality: Modality,
    vocab: &Vocab,
    ids: Option<&[String]>,
) -> Result<Vec<TrainItem>> {
    let records: Vec<_> = corpus
        .manifest
        .split(split)
        .into_iter()
        .filter(|r| match ids {
            Some(keep) => keep.contains(&r.id),
            None => true,
        })
        .collect();
    records
        .par_iter()
        .map(|rec| -> Result<TrainItem> {
            let feats = load_features(&corpus.dir, rec, modality)?;
            Ok(TrainItem {
                id: rec.id.clone(),
                words: rec.words.clone(),
                targets: vocab.encode_targets(&rec.words),
                audio: feats.audio,
                visual: feats.visual,
            })
        })
        .collect()
}

/// Seed-determined batch order: a fresh shuffle per epoch, stepped through in
/// fixed-size batches.
pub struct BatchSchedule {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSchedule {
    pub fn new(n_items: usize, batch: usize, seed: u64) -> Self {
        let mut s = BatchSchedule {
            order: (0..n_items).collect(),
            pos: 0,
            batch: batch.min(n_items.max(1)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        for i in (1..self.order.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos + self.batch > self.order.len() {
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Sample contiguous mask spans covering roughly `coverage` of `t` frames.
/// Spans may overlap, so realized coverage can run slightly below target.
pub fn sample_mask(t: usize, coverage: f64, span: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut mask = vec![false; t];
    if t == 0 || coverage <= 0.0 {
        return mask;
    }
    if t <= span {
        mask.fill(true);
        return mask;
    }
    let n_spans = ((coverage * t as f64) / span as f64).round().max(1.0) as usize;
    for _ in 0..n_spans {
        let start = rng.gen_range(0..=t - span);
        for m in mask.iter_mut().skip(start).take(span) {
            *m = true;
        }
    }
    mask
}

/// Draw the pretraining modality-dropout case: (audio kept, visual kept).
pub fn sample_dropout(probs: (f64, f64, f64), rng: &mut ChaCha8Rng) -> (bool, bool) {
    let x: f64 = rng.gen();
    if x < probs.0 {
        (true, false)
    } else if x < probs.0 + probs.1 {
        (false, true)
    } else {
        (true, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_covers_items_deterministically() {
        let mut a = BatchSchedule::new(10, 3, 5);
        let mut b = BatchSchedule::new(10, 3, 5);
        for _ in 0..20 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
        let mut seen = std::collections::HashSet::new();
        let mut s = BatchSchedule::new(10, 3, 5);
        for _ in 0..10 {
            for i in s.next_batch() {
                seen.insert(i);
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn mask_spans_hit_expected_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut covered = 0usize;
        let trials = 500;
        let t = 30;
        for _ in 0..trials {
            let mask = sample_mask(t, 0.3, 3, &mut rng);
            covered += mask.iter().filter(|&&m| m).count();
        }
        let frac = covered as f64 / (trials * t) as f64;
        assert!((0.2..=0.35).contains(&frac), "coverage {frac}");
    }

    #[test]
    fn degenerate_dropout_always_keeps_both() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_dropout((0.0, 0.0, 1.0), &mut rng), (true, true));
        }
    }

    #[test]
    fn short_utterances_mask_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mask = sample_mask(2, 0.3, 3, &mut rng);
        assert_eq!(mask, vec![true, true]);
    }
}
