//! Decoding and scoring: WER with alignment backtrace, beam search, modality
//! routing, homophene confusion analysis, parameter accounting and the
//! cluster-count sweep.

pub mod beam;
pub mod confusion;
pub mod count;
pub mod report;
pub mod sweep;
pub mod wer;

pub use beam::{beam_decode, beam_decode_from_memory, EvalContext};
pub use confusion::{confusion_report, ConfusionReport, PairSubstitution};
pub use count::{count_tunable, prompt_param_formula, TunableCount};
pub use report::{default_max_len, evaluate_split, evaluate_with_decoder, EvalReport, UttEval};
pub use sweep::{cluster_sweep, SweepPoint};
pub use wer::{wer, wer_align, AlignOp, WerCounts};
