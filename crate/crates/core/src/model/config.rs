//! Model configuration and the word-level vocabulary.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIAL_TOKENS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// K-way pretraining cluster vocabulary.
    pub clusters_k: usize,
    /// N cluster-prompt embeddings per encoder layer.
    pub prompt_clusters_n: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    /// Total token vocabulary including PAD/BOS/EOS/UNK.
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Sinusoidal positional encodings on the encoder input.
    pub use_positional: bool,
}

impl ModelConfig {
    /// CPU-trainable desk defaults.
    pub fn desk_default(word_count: usize, audio_dim: usize, visual_dim: usize) -> Self {
        ModelConfig {
            d_model: 64,
            encoder_layers: 4,
            decoder_layers: 2,
            heads: 4,
            ffn_dim: 256,
            clusters_k: 64,
            prompt_clusters_n: 20,
            audio_dim,
            visual_dim,
            vocab_size: word_count + SPECIAL_TOKENS,
            max_seq_len: 64,
            use_positional: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::Config("encoder and decoder need at least one layer".into()));
        }
        if self.prompt_clusters_n == 0 {
            return Err(Error::Config("prompt cluster count must be >= 1".into()));
        }
        if self.clusters_k < 2 {
            return Err(Error::Config("pretraining cluster count must be >= 2".into()));
        }
        if self.vocab_size <= SPECIAL_TOKENS {
            return Err(Error::Config("vocabulary has no words".into()));
        }
        if self.audio_dim == 0 || self.visual_dim == 0 {
            return Err(Error::Config("input feature dims must be positive".into()));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len too small".into()));
        }
        Ok(())
    }

    pub fn word_count(&self) -> usize {
        self.vocab_size - SPECIAL_TOKENS
    }
}

/// Word vocabulary with fixed special tokens. Word ids start at
/// `SPECIAL_TOKENS`; the word list is kept sorted so identical corpora yield
/// identical token assignments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        Vocab::new(r.words)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { words: v.words }
    }
}

impl Vocab {
    pub fn new(mut words: Vec<String>) -> Self {
        words.sort();
        words.dedup();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), (i + SPECIAL_TOKENS) as u32))
            .collect();
        Vocab { words, index }
    }

    pub fn size(&self) -> usize {
        self.words.len() + SPECIAL_TOKENS
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn word_of(&self, id: u32) -> Option<&str> {
        let id = id as usize;
        if id < SPECIAL_TOKENS {
            return None;
        }
        self.words.get(id - SPECIAL_TOKENS).map(|s| s.as_str())
    }

    /// Target token sequence for a transcript: word ids followed by EOS.
    pub fn encode_targets(&self, words: &[String]) -> Vec<u32> {
        let mut out: Vec<u32> = words.iter().map(|w| self.id_of(w)).collect();
        out.push(EOS);
        out
    }

    /// Map generated ids back to words, dropping specials.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter_map(|&id| self.word_of(id).map(String::from))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_roundtrip_and_unk() {
        let v = Vocab::new(vec!["b".into(), "a".into(), "c".into()]);
        assert_eq!(v.size(), 7);
        assert_eq!(v.id_of("a"), 4);
        assert_eq!(v.id_of("zzz"), UNK);
        assert_eq!(v.word_of(5), Some("b"));
        assert_eq!(v.word_of(PAD), None);
        let t = v.encode_targets(&["a".into(), "c".into()]);
        assert_eq!(t, vec![4, 6, EOS]);
        assert_eq!(v.decode(&[4, 6, EOS]), vec!["a".to_string(), "c".to_string()]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::desk_default(100, 16, 16);
        cfg.validate().unwrap();
        cfg.d_model = 65;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk_default(100, 16, 16);
        cfg.encoder_layers = 0;
        assert!(cfg.validate().is_err());
    }
}
