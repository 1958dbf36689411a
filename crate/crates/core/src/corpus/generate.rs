//! Corpus generation and the line-delimited manifest.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, derive_seed};

use super::domain::{sample_utterance_text, DomainSpec};
use super::render::{render_utterance, Prototypes, RenderConfig};
use super::types::{build_lexicon_with, Lexicon, PhonemeInventory, VisemeMap};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const CONFIG_FILE: &str = "corpus_config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Per-domain slice of the corpus configuration. The domain vocabulary is
/// `shuffled_words[vocab_start .. vocab_start + vocab_count]` over a seeded
/// shuffle of the lexicon, so overlapping and disjoint domains are both easy
/// to express.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainConfig {
    pub id: String,
    pub vocab_start: usize,
    pub vocab_count: usize,
    pub zipf_s: f64,
    pub bigram_alpha: f64,
    pub bigram_unigram_mix: f64,
    pub utterance_len: (usize, usize),
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub seed: u64,
    pub phoneme_count: usize,
    pub viseme_count: usize,
    pub vocab_size: usize,
    pub homophene_pairs: usize,
    pub word_len_range: (usize, usize),
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub render: RenderConfig,
    pub domains: Vec<DomainConfig>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 17,
            phoneme_count: 40,
            viseme_count: 20,
            vocab_size: 200,
            homophene_pairs: 12,
            word_len_range: (1, 4),
            audio_dim: 16,
            visual_dim: 16,
            render: RenderConfig::default(),
            domains: vec![DomainConfig {
                id: "base".into(),
                vocab_start: 0,
                vocab_count: 200,
                zipf_s: 1.0,
                bigram_alpha: 0.3,
                bigram_unigram_mix: 0.4,
                utterance_len: (2, 5),
                train: 4000,
                val: 200,
                test: 200,
            }],
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phoneme_count < 8 {
            return Err(Error::Config("phoneme inventory must have at least 8 entries".into()));
        }
        if self.viseme_count == 0 || self.viseme_count > self.phoneme_count {
            return Err(Error::Config("viseme count must be in [1, phoneme count]".into()));
        }
        if self.domains.is_empty() {
            return Err(Error::Config("at least one domain is required".into()));
        }
        let mut ids = HashSet::new();
        for d in &self.domains {
            if !ids.insert(&d.id) {
                return Err(Error::Config(format!("duplicate domain id `{}`", d.id)));
            }
            if d.vocab_count == 0 || d.vocab_start + d.vocab_count > self.vocab_size {
                return Err(Error::Config(format!(
                    "domain `{}` vocabulary slice out of range",
                    d.id
                )));
            }
        }
        Ok(())
    }
}

/// One manifest line. Paths are relative to the corpus directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub domain: String,
    pub split: Split,
    pub words: Vec<String>,
    pub phonemes: Vec<String>,
    pub audio_path: String,
    pub visual_path: String,
    pub n_frames: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
    pub base_dir: PathBuf,
}

impl CorpusManifest {
    pub fn load(corpus_dir: &Path) -> Result<CorpusManifest> {
        let path = corpus_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::format(&path, format!("line {}: {e}", lineno + 1)))?;
            if !ids.insert(rec.id.clone()) {
                return Err(Error::format(&path, format!("duplicate id `{}`", rec.id)));
            }
            records.push(rec);
        }
        Ok(CorpusManifest {
            records,
            base_dir: corpus_dir.to_path_buf(),
        })
    }

    pub fn save(&self, corpus_dir: &Path) -> Result<()> {
        let path = corpus_dir.join(MANIFEST_FILE);
        let mut out = String::new();
        for rec in &self.records {
            out.push_str(&serde_json::to_string(rec).map_err(|e| Error::format(&path, e.to_string()))?);
            out.push('\n');
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn record(&self, id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Check that every referenced feature file exists, parses, and matches
    /// the recorded frame count.
    pub fn validate_files(&self) -> Result<()> {
        for rec in &self.records {
            for (path, modality) in [(&rec.audio_path, "audio"), (&rec.visual_path, "visual")] {
                let full = self.base_dir.join(path);
                if !full.exists() {
                    return Err(Error::MissingModality {
                        utterance: rec.id.clone(),
                        modality: modality.into(),
                        path: full,
                    });
                }
                let tensor = io::read_tensor(&full)?;
                if tensor.nrows() != rec.n_frames {
                    return Err(Error::format(
                        &full,
                        format!("frame count {} does not match manifest {}", tensor.nrows(), rec.n_frames),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Lexicon sidecar written next to the manifest: everything evaluation needs
/// to reason about words, phonemes and visemes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexiconFile {
    pub inventory: PhonemeInventory,
    pub viseme_map: VisemeMap,
    pub lexicon: Lexicon,
}

impl LexiconFile {
    pub fn load(corpus_dir: &Path) -> Result<LexiconFile> {
        io::read_json(&corpus_dir.join(LEXICON_FILE))
    }
}

#[derive(Debug)]
pub struct GeneratedCorpus {
    pub manifest: CorpusManifest,
    pub lexicon: LexiconFile,
    pub domains: Vec<DomainSpec>,
}

/// Generate the corpus into `out_dir`: feature files under `features/`, the
/// manifest, and the lexicon sidecar. Deterministic for a fixed config; each
/// utterance derives its own seed from (master seed, id) so rendering is
/// independent of parallelism degree.
pub fn generate_corpus(config: &CorpusConfig, out_dir: &Path, force: bool) -> Result<GeneratedCorpus> {
    config.validate()?;
    io::prepare_out_dir(out_dir, force)?;
    let feature_dir = out_dir.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;

    let inventory = PhonemeInventory::synthetic(config.phoneme_count);
    let viseme_map = VisemeMap::synthetic(&inventory, config.viseme_count)?;
    let lexicon = build_lexicon_with(
        &inventory,
        &viseme_map,
        config.vocab_size,
        config.homophene_pairs,
        config.word_len_range,
        derive_seed(config.seed, "lexicon"),
    )?;
    let protos = Prototypes::generate(
        &inventory,
        &viseme_map,
        config.audio_dim,
        config.visual_dim,
        derive_seed(config.seed, "prototypes"),
    )?;

    // Stable word shuffle shared by all domain slices.
    let shuffled_words = {
        let mut words = lexicon.words();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "domain-vocab"));
        for i in (1..words.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            words.swap(i, j);
        }
        words
    };

    let mut domains = Vec::with_capacity(config.domains.len());
    for d in &config.domains {
        let vocab = shuffled_words[d.vocab_start..d.vocab_start + d.vocab_count].to_vec();
        domains.push(DomainSpec::synthesize(
            d.id.clone(),
            vocab,
            d.zipf_s,
            d.bigram_alpha,
            d.bigram_unigram_mix,
            d.utterance_len,
            derive_seed(config.seed, &format!("domain/{}", d.id)),
        )?);
    }

    // Plan all utterances, then render in parallel.
    struct Plan {
        id: String,
        domain_idx: usize,
        split: Split,
    }
    let mut plans = Vec::new();
    {
        let mut counter = 0usize;
        for (di, d) in config.domains.iter().enumerate() {
            for (split, count) in [
                (Split::Train, d.train),
                (Split::Val, d.val),
                (Split::Test, d.test),
            ] {
                for _ in 0..count {
                    plans.push(Plan {
                        id: format!("u{counter:06}"),
                        domain_idx: di,
                        split,
                    });
                    counter += 1;
                }
            }
        }
    }

    let records: Vec<ManifestRecord> = plans
        .par_iter()
        .map(|plan| -> Result<ManifestRecord> {
            let domain = &domains[plan.domain_idx];
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &format!("utt/{}", plan.id)));
            let (words, phonemes) = sample_utterance_text(domain, &lexicon, &mut rng)?;
            let phoneme_ids: Vec<usize> = phonemes
                .iter()
                .map(|p| inventory.index_of(p).expect("lexicon validated"))
                .collect();
            let rendered = render_utterance(&phoneme_ids, &protos, &config.render, &mut rng)?;
            debug_assert_eq!(rendered.audio.nrows(), rendered.visual.nrows());

            let audio_path = format!("features/{}.audio.omsr", plan.id);
            let visual_path = format!("features/{}.visual.omsr", plan.id);
            io::write_tensor(&out_dir.join(&audio_path), &rendered.audio)?;
            io::write_tensor(&out_dir.join(&visual_path), &rendered.visual)?;
            Ok(ManifestRecord {
                id: plan.id.clone(),
                domain: domain.id.clone(),
                split: plan.split,
                words,
                phonemes,
                audio_path,
                visual_path,
                n_frames: rendered.audio.nrows(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = CorpusManifest {
        records,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.save(out_dir)?;
    let lexicon_file = LexiconFile {
        inventory,
        viseme_map,
        lexicon,
    };
    io::write_json(&out_dir.join(LEXICON_FILE), &lexicon_file)?;
    io::write_json(&out_dir.join(CONFIG_FILE), config)?;

    Ok(GeneratedCorpus {
        manifest,
        lexicon: lexicon_file,
        domains,
    })
}

/// Loaded feature views for one utterance, honouring modality routing: only
/// the requested views are read from disk.
#[derive(Debug, Clone)]
pub struct UttFeatures {
    pub audio: Option<Array2<f64>>,
    pub visual: Option<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
    AudioVisual,
}

impl Modality {
    pub fn parse(s: &str) -> Result<Modality> {
        match s {
            "audio" => Ok(Modality::Audio),
            "visual" => Ok(Modality::Visual),
            "audio_visual" => Ok(Modality::AudioVisual),
            other => Err(Error::Config(format!(
                "unknown modality `{other}` (expected audio, visual or audio_visual)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Visual => "visual",
            Modality::AudioVisual => "audio_visual",
        }
    }

    pub fn wants_audio(&self) -> bool {
        matches!(self, Modality::Audio | Modality::AudioVisual)
    }

    pub fn wants_visual(&self) -> bool {
        matches!(self, Modality::Visual | Modality::AudioVisual)
    }
}

pub fn load_features(
    base_dir: &Path,
    rec: &ManifestRecord,
    modality: Modality,
) -> Result<UttFeatures> {
    let read = |rel: &str, kind: &str| -> Result<Array2<f64>> {
        let full = base_dir.join(rel);
        if !full.exists() {
            return Err(Error::MissingModality {
                utterance: rec.id.clone(),
                modality: kind.into(),
                path: full,
            });
        }
        io::read_tensor(&full)
    };
    let audio = if modality.wants_audio() {
        Some(read(&rec.audio_path, "audio")?)
    } else {
        None
    };
    let visual = if modality.wants_visual() {
        Some(read(&rec.visual_path, "visual")?)
    } else {
        None
    };
    Ok(UttFeatures { audio, visual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::hash_dir_contents;

    fn small_config() -> CorpusConfig {
        CorpusConfig {
            seed: 5,
            phoneme_count: 16,
            viseme_count: 8,
            vocab_size: 24,
            homophene_pairs: 2,
            domains: vec![DomainConfig {
                id: "d0".into(),
                vocab_start: 0,
                vocab_count: 24,
                zipf_s: 1.0,
                bigram_alpha: 0.3,
                bigram_unigram_mix: 0.4,
                utterance_len: (2, 4),
                train: 10,
                val: 2,
                test: 2,
            }],
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn counts_and_unique_ids() {
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_corpus(&small_config(), dir.path(), false).unwrap();
        let m = &gen.manifest;
        assert_eq!(m.records.len(), 14);
        assert_eq!(m.split(Split::Train).len(), 10);
        assert_eq!(m.split(Split::Val).len(), 2);
        assert_eq!(m.split(Split::Test).len(), 2);
        let ids: HashSet<_> = m.records.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), 14);
        m.validate_files().unwrap();
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = small_config();
        generate_corpus(&cfg, d1.path(), false).unwrap();
        generate_corpus(&cfg, d2.path(), false).unwrap();
        assert_eq!(
            hash_dir_contents(d1.path()).unwrap(),
            hash_dir_contents(d2.path()).unwrap()
        );
        let mut other = cfg;
        other.seed = 6;
        let d3 = tempfile::tempdir().unwrap();
        generate_corpus(&other, d3.path(), false).unwrap();
        assert_ne!(
            hash_dir_contents(d1.path()).unwrap(),
            hash_dir_contents(d3.path()).unwrap()
        );
    }

    #[test]
    fn disjoint_domains_share_no_words() {
        let mut cfg = small_config();
        cfg.domains = vec![
            DomainConfig {
                id: "a".into(),
                vocab_start: 0,
                vocab_count: 10,
                zipf_s: 1.0,
                bigram_alpha: 0.3,
                bigram_unigram_mix: 0.4,
                utterance_len: (2, 4),
                train: 8,
                val: 0,
                test: 0,
            },
            DomainConfig {
                id: "b".into(),
                vocab_start: 10,
                vocab_count: 10,
                zipf_s: 1.0,
                bigram_alpha: 0.3,
                bigram_unigram_mix: 0.4,
                utterance_len: (2, 4),
                train: 8,
                val: 0,
                test: 0,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_corpus(&cfg, dir.path(), false).unwrap();
        let words_a: HashSet<_> = gen
            .manifest
            .records
            .iter()
            .filter(|r| r.domain == "a")
            .flat_map(|r| r.words.clone())
            .collect();
        let words_b: HashSet<_> = gen
            .manifest
            .records
            .iter()
            .filter(|r| r.domain == "b")
            .flat_map(|r| r.words.clone())
            .collect();
        assert!(words_a.is_disjoint(&words_b));
    }

    #[test]
    fn overwrite_requires_force() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        generate_corpus(&cfg, dir.path(), false).unwrap();
        let err = generate_corpus(&cfg, dir.path(), false).unwrap_err();
        assert!(matches!(err, Error::WouldOverwrite(_)));
        generate_corpus(&cfg, dir.path(), true).unwrap();
    }

    #[test]
    fn loader_routes_modalities() {
        let dir = tempfile::tempdir().unwrap();
        let gen = generate_corpus(&small_config(), dir.path(), false).unwrap();
        let rec = &gen.manifest.records[0];
        // Remove the audio file: visual routing must still succeed.
        fs::remove_file(dir.path().join(&rec.audio_path)).unwrap();
        let visual = load_features(dir.path(), rec, Modality::Visual).unwrap();
        assert!(visual.audio.is_none());
        assert!(visual.visual.is_some());
        let err = load_features(dir.path(), rec, Modality::Audio).unwrap_err();
        match err {
            Error::MissingModality { utterance, .. } => assert_eq!(utterance, rec.id),
            other => panic!("unexpected error {other:?}"),
        }
    }
}
