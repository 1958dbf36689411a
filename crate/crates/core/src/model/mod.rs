//! The differentiable core: modality fusion with zero-vector substitution, a
//! prompt-aware self-attention encoder into the shared phoneme space, an
//! autoregressive word decoder, and the two training losses. All forward and
//! backward passes are hand-written in f64 so gradients can be validated
//! against central finite differences.

pub mod config;
pub mod gradcheck;
pub mod loss;
pub mod net;
pub mod ops;
pub mod params;
pub mod pipeline;

pub use config::{ModelConfig, Vocab, BOS, EOS, PAD, SPECIAL_TOKENS, UNK};
pub use loss::{masked_cluster_loss, sequence_loss};
pub use net::{cluster_prompt_apply, decoder_fwd, encode_fwd, frontend_fwd, fuse_frames};
pub use params::{
    add_prompt_params, has_prompt_params, init_params, Checkpoint, FreezeMask, GradStore, Names,
    ParamState, ParameterStore, StageTag,
};
pub use pipeline::{
    decode_logits, encode_features, masked_cluster_step, s2s_loss, s2s_loss_from_memory,
};
