//! Synthetic paired-modality corpus: lexicon construction, per-domain text
//! sampling, feature rendering and word-distribution analytics.

pub mod analytics;
pub mod domain;
pub mod generate;
pub mod render;
pub mod types;

pub use analytics::{
    common_word_split, cross_domain_term_counts, vocab_iou_at_topk, word_frequency_table,
    IouPoint, SplitManifest, TfTable,
};
pub use domain::{sample_utterance_text, DomainSpec};
pub use generate::{
    generate_corpus, load_features, CorpusConfig, CorpusManifest, DomainConfig, GeneratedCorpus,
    LexiconFile, ManifestRecord, Modality, Split, UttFeatures,
};
pub use render::{render_utterance, AlignedSegment, Prototypes, RenderConfig, RenderedUtterance};
pub use types::{build_lexicon, build_lexicon_with, Lexicon, LexiconEntry, PhonemeInventory, VisemeMap};
