//! openmod: a desk-scale open-modality speech recognition pipeline.
//!
//! The crate generates synthetic paired audio/visual utterances, pretrains a
//! shared encoder with masked cluster prediction and modality dropout, trains
//! a word decoder on audio alone behind a per-parameter freeze registry, and
//! transfers it to the visual modality zero-shot, via cluster-prompt tuning,
//! or by selective fine-tuning. Evaluation covers WER with edit-distance
//! alignment, beam search decoding, homophene confusion analysis and
//! parameter accounting.

pub mod corpus;
pub mod model;
pub mod runner;
pub mod training;
pub mod error;
pub mod eval;
pub mod io;

pub use error::{Error, Result};
