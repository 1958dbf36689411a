//! Phoneme inventory, viseme map and lexicon.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered phoneme identifiers. Identifiers must be unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeInventory {
    pub phonemes: Vec<String>,
}

impl PhonemeInventory {
    pub fn new(phonemes: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &phonemes {
            if !seen.insert(p.clone()) {
                return Err(Error::Validation(format!("duplicate phoneme `{p}`")));
            }
        }
        if phonemes.is_empty() {
            return Err(Error::Validation("empty phoneme inventory".into()));
        }
        Ok(PhonemeInventory { phonemes })
    }

    /// `p00`, `p01`, ... with zero padding.
    pub fn synthetic(count: usize) -> Self {
        let phonemes = (0..count).map(|i| format!("p{i:02}")).collect();
        PhonemeInventory { phonemes }
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn index_of(&self, phoneme: &str) -> Option<usize> {
        self.phonemes.iter().position(|p| p == phoneme)
    }
}

/// Total mapping phoneme id -> viseme class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisemeMap {
    pub mapping: BTreeMap<String, String>,
}

impl VisemeMap {
    pub fn new(mapping: BTreeMap<String, String>, inventory: &PhonemeInventory) -> Result<Self> {
        for p in &inventory.phonemes {
            if !mapping.contains_key(p) {
                return Err(Error::Validation(format!("phoneme `{p}` has no viseme")));
            }
        }
        Ok(VisemeMap { mapping })
    }

    /// Map phoneme index i to viseme class `i % viseme_count`, giving every
    /// class `P / V` members when V divides P.
    pub fn synthetic(inventory: &PhonemeInventory, viseme_count: usize) -> Result<Self> {
        if viseme_count == 0 || viseme_count > inventory.len() {
            return Err(Error::Validation(format!(
                "viseme count {viseme_count} out of range for {} phonemes",
                inventory.len()
            )));
        }
        let mapping = inventory
            .phonemes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), format!("v{:02}", i % viseme_count)))
            .collect();
        Ok(VisemeMap { mapping })
    }

    pub fn viseme_of(&self, phoneme: &str) -> Option<&str> {
        self.mapping.get(phoneme).map(|s| s.as_str())
    }

    pub fn viseme_classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = self
            .mapping
            .values()
            .cloned()
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        classes.sort();
        classes
    }

    /// Viseme classes with at least two phonemes, with their members in
    /// inventory order.
    pub fn ambiguous_classes(&self, inventory: &PhonemeInventory) -> Vec<(String, Vec<String>)> {
        let mut by_class: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in &inventory.phonemes {
            if let Some(v) = self.viseme_of(p) {
                by_class.entry(v.to_string()).or_default().push(p.clone());
            }
        }
        by_class.into_iter().filter(|(_, ps)| ps.len() >= 2).collect()
    }

    pub fn viseme_seq(&self, phonemes: &[String]) -> Vec<String> {
        phonemes
            .iter()
            .map(|p| self.mapping.get(p).cloned().unwrap_or_default())
            .collect()
    }
}

/// Word -> phoneme sequence table. Words are unique; every phoneme belongs to
/// the inventory; phoneme sequences are 1-6 symbols long.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: Vec<LexiconEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    pub phonemes: Vec<String>,
}

impl Lexicon {
    pub fn words(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.word.clone()).collect()
    }

    pub fn phonemes_of(&self, word: &str) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|e| e.word == word)
            .map(|e| e.phonemes.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, inventory: &PhonemeInventory) -> Result<()> {
        let mut words = HashSet::new();
        for e in &self.entries {
            if !words.insert(&e.word) {
                return Err(Error::Validation(format!("duplicate word `{}`", e.word)));
            }
            if e.phonemes.is_empty() || e.phonemes.len() > 6 {
                return Err(Error::Validation(format!(
                    "word `{}` has {} phonemes (expected 1-6)",
                    e.word,
                    e.phonemes.len()
                )));
            }
            for p in &e.phonemes {
                if inventory.index_of(p).is_none() {
                    return Err(Error::Validation(format!(
                        "word `{}` uses unknown phoneme `{p}`",
                        e.word
                    )));
                }
            }
        }
        Ok(())
    }

    /// All unordered word pairs whose viseme sequences are identical while
    /// their phoneme sequences differ.
    pub fn homophene_pairs(&self, viseme_map: &VisemeMap) -> Vec<(String, String)> {
        let mut by_viseme: BTreeMap<Vec<String>, Vec<&LexiconEntry>> = BTreeMap::new();
        for e in &self.entries {
            by_viseme
                .entry(viseme_map.viseme_seq(&e.phonemes))
                .or_default()
                .push(e);
        }
        let mut pairs = Vec::new();
        for group in by_viseme.values() {
            for i in 0..group.len() {
                for j in i + 1..group.len() {
                    if group[i].phonemes != group[j].phonemes {
                        pairs.push((group[i].word.clone(), group[j].word.clone()));
                    }
                }
            }
        }
        pairs.sort();
        pairs
    }

    /// Words that belong to at least one homophene pair.
    pub fn homophene_words(&self, viseme_map: &VisemeMap) -> HashSet<String> {
        let mut set = HashSet::new();
        for (a, b) in self.homophene_pairs(viseme_map) {
            set.insert(a);
            set.insert(b);
        }
        set
    }
}

/// Build a lexicon with exactly `homophene_pairs` pairs of words that share a
/// viseme sequence while differing in phonemes. All other viseme sequences
/// are unique, so no accidental pairs exist. Deterministic for a fixed seed.
pub fn build_lexicon(
    inventory: &PhonemeInventory,
    viseme_map: &VisemeMap,
    vocab_size: usize,
    homophene_pairs: usize,
    seed: u64,
) -> Result<Lexicon> {
    build_lexicon_with(inventory, viseme_map, vocab_size, homophene_pairs, (1, 4), seed)
}

pub fn build_lexicon_with(
    inventory: &PhonemeInventory,
    viseme_map: &VisemeMap,
    vocab_size: usize,
    homophene_pairs: usize,
    word_len_range: (usize, usize),
    seed: u64,
) -> Result<Lexicon> {
    if vocab_size < 4 {
        return Err(Error::Validation(format!(
            "vocab_size {vocab_size} < 4"
        )));
    }
    if 2 * homophene_pairs > vocab_size {
        return Err(Error::LexiconConstruction(format!(
            "{homophene_pairs} homophene pairs need {} words but vocab_size is {vocab_size}",
            2 * homophene_pairs
        )));
    }
    let (lo, hi) = word_len_range;
    if lo == 0 || hi < lo || hi > 6 {
        return Err(Error::Validation(format!(
            "word length range [{lo},{hi}] outside [1,6]"
        )));
    }
    let ambiguous = viseme_map.ambiguous_classes(inventory);
    if homophene_pairs > 0 && ambiguous.is_empty() {
        return Err(Error::LexiconConstruction(
            "homophene pairs requested but the viseme map is injective".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used_viseme_seqs: HashSet<Vec<String>> = HashSet::new();
    let mut used_phoneme_seqs: HashSet<Vec<String>> = HashSet::new();
    let mut phoneme_seqs: Vec<Vec<String>> = Vec::with_capacity(vocab_size);

    let sample_seq = |rng: &mut ChaCha8Rng, len: usize| -> Vec<String> {
        (0..len)
            .map(|_| inventory.phonemes[rng.gen_range(0..inventory.len())].clone())
            .collect()
    };

    const MAX_ATTEMPTS: usize = 20_000;

    for _ in 0..homophene_pairs {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let len = rng.gen_range(lo..=hi);
            let mut seq = sample_seq(&mut rng, len);
            // Force one position into an ambiguous viseme class and derive
            // the partner by swapping that phoneme within the class.
            let pos = rng.gen_range(0..len);
            let (_, members) = &ambiguous[rng.gen_range(0..ambiguous.len())];
            let a_idx = rng.gen_range(0..members.len());
            let mut b_idx = rng.gen_range(0..members.len() - 1);
            if b_idx >= a_idx {
                b_idx += 1;
            }
            seq[pos] = members[a_idx].clone();
            let mut partner = seq.clone();
            partner[pos] = members[b_idx].clone();

            let vseq = viseme_map.viseme_seq(&seq);
            if used_viseme_seqs.contains(&vseq)
                || used_phoneme_seqs.contains(&seq)
                || used_phoneme_seqs.contains(&partner)
            {
                continue;
            }
            used_viseme_seqs.insert(vseq);
            used_phoneme_seqs.insert(seq.clone());
            used_phoneme_seqs.insert(partner.clone());
            phoneme_seqs.push(seq);
            phoneme_seqs.push(partner);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::LexiconConstruction(format!(
                "could not construct {homophene_pairs} homophene pairs from this viseme map"
            )));
        }
    }

    // Remaining words: viseme sequences must be globally unique so the pair
    // count stays exact. Lengths escalate past the configured range (capped
    // at 6) when a tiny inventory exhausts the short sequences.
    while phoneme_seqs.len() < vocab_size {
        let mut placed = false;
        for attempt in 0..MAX_ATTEMPTS {
            let hi_eff = if attempt > MAX_ATTEMPTS / 2 { 6 } else { hi };
            let len = rng.gen_range(lo..=hi_eff.max(lo));
            let seq = sample_seq(&mut rng, len);
            let vseq = viseme_map.viseme_seq(&seq);
            if used_viseme_seqs.contains(&vseq) || used_phoneme_seqs.contains(&seq) {
                continue;
            }
            used_viseme_seqs.insert(vseq);
            used_phoneme_seqs.insert(seq.clone());
            phoneme_seqs.push(seq);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::LexiconConstruction(format!(
                "inventory too small for {vocab_size} viseme-distinct words"
            )));
        }
    }

    let width = vocab_size.to_string().len().max(3);
    let entries = phoneme_seqs
        .into_iter()
        .enumerate()
        .map(|(i, phonemes)| LexiconEntry {
            word: format!("w{i:0width$}"),
            phonemes,
        })
        .collect();
    let lexicon = Lexicon { entries };
    lexicon.validate(inventory)?;
    Ok(lexicon)
}
