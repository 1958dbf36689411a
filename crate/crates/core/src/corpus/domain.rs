//! Domain specifications: per-domain word distribution and transition syntax.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::types::Lexicon;

const PROB_TOL: f64 = 1e-9;

/// A domain: a vocabulary subset, a Zipf unigram over it, and a
/// row-stochastic bigram transition matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub vocab: Vec<String>,
    pub zipf_s: f64,
    pub unigram: Vec<f64>,
    pub bigram: Vec<Vec<f64>>,
    /// Utterance length range in words, inclusive.
    pub len_range: (usize, usize),
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let w = self.vocab.len();
        if w == 0 {
            return Err(Error::Validation(format!("domain `{}` has empty vocabulary", self.id)));
        }
        if self.zipf_s <= 0.0 {
            return Err(Error::Validation(format!(
                "domain `{}` zipf exponent must be > 0",
                self.id
            )));
        }
        if self.unigram.len() != w || self.bigram.len() != w {
            return Err(Error::Validation(format!(
                "domain `{}` distribution sizes do not match vocabulary",
                self.id
            )));
        }
        let usum: f64 = self.unigram.iter().sum();
        if (usum - 1.0).abs() > PROB_TOL {
            return Err(Error::Validation(format!(
                "domain `{}` unigram sums to {usum}, expected 1",
                self.id
            )));
        }
        for (i, row) in self.bigram.iter().enumerate() {
            if row.len() != w {
                return Err(Error::Validation(format!(
                    "domain `{}` bigram row {i} has wrong width",
                    self.id
                )));
            }
            let rsum: f64 = row.iter().sum();
            if (rsum - 1.0).abs() > PROB_TOL {
                return Err(Error::Validation(format!(
                    "domain `{}` bigram row {i} sums to {rsum}, expected 1",
                    self.id
                )));
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::Validation(format!(
                    "domain `{}` bigram row {i} has a negative entry",
                    self.id
                )));
            }
        }
        if self.len_range.0 == 0 || self.len_range.1 < self.len_range.0 {
            return Err(Error::Validation(format!(
                "domain `{}` has invalid length range",
                self.id
            )));
        }
        Ok(())
    }

    /// Synthesize a domain: Zipf(s) unigram over a seeded rank permutation of
    /// `vocab`, and bigram rows mixing a Dirichlet(alpha) draw with the
    /// unigram so every row keeps full support.
    pub fn synthesize(
        id: impl Into<String>,
        vocab: Vec<String>,
        zipf_s: f64,
        bigram_alpha: f64,
        bigram_unigram_mix: f64,
        len_range: (usize, usize),
        seed: u64,
    ) -> Result<DomainSpec> {
        let w = vocab.len();
        if w == 0 {
            return Err(Error::Validation("cannot synthesize a domain over an empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Rank permutation: word i gets rank perm[i] + 1.
        let mut perm: Vec<usize> = (0..w).collect();
        for i in (1..w).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let mut unigram: Vec<f64> = perm
            .iter()
            .map(|&r| 1.0 / ((r + 1) as f64).powf(zipf_s))
            .collect();
        normalize(&mut unigram);

        let gamma = Gamma::new(bigram_alpha, 1.0)
            .map_err(|e| Error::Config(format!("bad bigram alpha: {e}")))?;
        let mix = bigram_unigram_mix.clamp(0.0, 1.0);
        let mut bigram = Vec::with_capacity(w);
        for _ in 0..w {
            let mut row: Vec<f64> = (0..w).map(|_| gamma.sample(&mut rng)).collect();
            normalize(&mut row);
            for (r, u) in row.iter_mut().zip(&unigram) {
                *r = (1.0 - mix) * *r + mix * u;
            }
            normalize(&mut row);
            bigram.push(row);
        }

        let spec = DomainSpec {
            id: id.into(),
            vocab,
            zipf_s,
            unigram,
            bigram,
            len_range,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.vocab.iter().position(|w| w == word)
    }
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    // Exact unit sum: push rounding residue onto the largest entry.
    for x in v.iter_mut() {
        *x /= s;
    }
    let resid = 1.0 - v.iter().sum::<f64>();
    if let Some(max) = v
        .iter_mut()
        .max_by(|a, b| a.partial_cmp(b).unwrap())
    {
        *max += resid;
    }
}

/// Draw one word index from a cumulative scan of `probs`.
fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let x: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Sample an utterance: first word from the unigram, later words from the
/// bigram row of their predecessor; phonemes are the concatenated lexicon
/// entries.
pub fn sample_utterance_text(
    domain: &DomainSpec,
    lexicon: &Lexicon,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<String>, Vec<String>)> {
    if domain.vocab.is_empty() {
        return Err(Error::Validation(format!(
            "domain `{}` has empty vocabulary",
            domain.id
        )));
    }
    for w in &domain.vocab {
        if lexicon.phonemes_of(w).is_none() {
            return Err(Error::Validation(format!(
                "domain `{}` word `{w}` is not in the lexicon",
                domain.id
            )));
        }
    }
    let (lo, hi) = domain.len_range;
    let n_words = rng.gen_range(lo..=hi);
    let mut words = Vec::with_capacity(n_words);
    let mut idx = sample_index(&domain.unigram, rng);
    words.push(domain.vocab[idx].clone());
    for _ in 1..n_words {
        idx = sample_index(&domain.bigram[idx], rng);
        words.push(domain.vocab[idx].clone());
    }
    let phonemes = words
        .iter()
        .flat_map(|w| lexicon.phonemes_of(w).unwrap().iter().cloned())
        .collect();
    Ok((words, phonemes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::types::{build_lexicon, PhonemeInventory, VisemeMap};
    use std::collections::HashMap;

    fn test_lexicon(vocab: usize) -> (PhonemeInventory, VisemeMap, Lexicon) {
        let inv = PhonemeInventory::synthetic(40);
        let map = VisemeMap::synthetic(&inv, 20).unwrap();
        let lex = build_lexicon(&inv, &map, vocab, 0, 5).unwrap();
        (inv, map, lex)
    }

    #[test]
    fn point_mass_distribution_repeats_one_word() {
        let (_, _, lex) = test_lexicon(4);
        let vocab = lex.words();
        let w = vocab.len();
        let mut unigram = vec![0.0; w];
        unigram[1] = 1.0;
        let mut row = vec![0.0; w];
        row[1] = 1.0;
        let spec = DomainSpec {
            id: "point".into(),
            vocab: vocab.clone(),
            zipf_s: 1.0,
            unigram,
            bigram: vec![row; w],
            len_range: (3, 3),
        };
        spec.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (words, phonemes) = sample_utterance_text(&spec, &lex, &mut rng).unwrap();
        assert_eq!(words, vec![vocab[1].clone(); 3]);
        let expected: Vec<String> = (0..3)
            .flat_map(|_| lex.phonemes_of(&vocab[1]).unwrap().iter().cloned())
            .collect();
        assert_eq!(phonemes, expected);
    }

    #[test]
    fn zipf_rank_ratio_monte_carlo() {
        let (_, _, lex) = test_lexicon(100);
        // Bigram rows equal to the unigram make every token an independent
        // Zipf draw, so rank-1/rank-2 token frequency must approach 2.
        let spec = {
            let base = DomainSpec::synthesize("z", lex.words(), 1.0, 0.3, 1.0, (1, 1), 123).unwrap();
            DomainSpec {
                bigram: vec![base.unigram.clone(); base.vocab.len()],
                ..base
            }
        };
        spec.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts: HashMap<String, u64> = HashMap::new();
        for _ in 0..10_000 {
            let (words, _) = sample_utterance_text(&spec, &lex, &mut rng).unwrap();
            for w in words {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut sorted: Vec<u64> = counts.values().copied().collect();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        let ratio = sorted[0] as f64 / sorted[1] as f64;
        assert!(
            (ratio - 2.0).abs() / 2.0 < 0.15,
            "rank-1/rank-2 ratio {ratio} outside 2 +/- 15%"
        );
    }

    #[test]
    fn samples_stay_in_domain_vocabulary() {
        let (_, _, lex) = test_lexicon(30);
        let sub: Vec<String> = lex.words()[..12].to_vec();
        let spec = DomainSpec::synthesize("s", sub.clone(), 1.2, 0.3, 0.4, (2, 6), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (words, _) = sample_utterance_text(&spec, &lex, &mut rng).unwrap();
            assert!(words.len() >= 2 && words.len() <= 6);
            for w in &words {
                assert!(sub.contains(w), "word {w} escaped the domain vocabulary");
            }
        }
    }

    #[test]
    fn empty_vocabulary_is_rejected() {
        let (_, _, lex) = test_lexicon(4);
        let spec = DomainSpec {
            id: "e".into(),
            vocab: vec![],
            zipf_s: 1.0,
            unigram: vec![],
            bigram: vec![],
            len_range: (1, 2),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_utterance_text(&spec, &lex, &mut rng).is_err());
    }

    #[test]
    fn synthesized_domains_pass_validation() {
        let (_, _, lex) = test_lexicon(50);
        let spec = DomainSpec::synthesize("d", lex.words(), 1.0, 0.3, 0.4, (2, 5), 31).unwrap();
        spec.validate().unwrap();
        // Distinct seeds give distinct rank orders almost surely.
        let other = DomainSpec::synthesize("d", lex.words(), 1.0, 0.3, 0.4, (2, 5), 32).unwrap();
        assert_ne!(spec.unigram, other.unigram);
    }
}
