//! Length-normalized beam search over the autoregressive decoder.

use ndarray::Array2;

use crate::corpus::UttFeatures;
use crate::error::Result;
use crate::model::{
    decode_logits, encode_features, has_prompt_params, Checkpoint, Names, BOS, EOS, PAD, UNK,
};
use crate::model::ops::log_softmax_row;

/// A checkpoint prepared for decoding.
pub struct EvalContext<'a> {
    pub ckpt: &'a Checkpoint,
    pub names: Names,
    pub prompts_enabled: bool,
}

impl<'a> EvalContext<'a> {
    pub fn new(ckpt: &'a Checkpoint) -> Self {
        let prompts_enabled = has_prompt_params(&ckpt.params);
        EvalContext {
            names: Names::new(&ckpt.model),
            ckpt,
            prompts_enabled,
        }
    }

    pub fn encode(&self, feats: &UttFeatures) -> Result<Array2<f64>> {
        encode_features(
            &self.ckpt.params,
            &self.names,
            &self.ckpt.model,
            feats.audio.as_ref(),
            feats.visual.as_ref(),
            self.prompts_enabled,
        )
    }
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<u32>,
    log_prob: f64,
    finished: bool,
}

impl Hypothesis {
    /// Generated-token count (everything after BOS, including EOS if any).
    fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    fn score(&self) -> f64 {
        self.log_prob / self.generated().max(1) as f64
    }
}

/// Beam search from BOS to EOS with scores normalized by generated length.
/// `beam_size` 1 is exactly stepwise argmax decoding; candidates tie-break on
/// token id, then beam order, so results are deterministic.
pub fn beam_decode(
    ctx: &EvalContext,
    feats: &UttFeatures,
    beam_size: usize,
    max_len: usize,
) -> Result<Vec<String>> {
    let fp = ctx.encode(feats)?;
    let hyp = beam_decode_from_memory(ctx, &fp, beam_size, max_len)?;
    Ok(ctx.ckpt.vocab.decode(&hyp.0))
}

/// Decode against a precomputed memory; returns (generated tokens, score).
pub fn beam_decode_from_memory(
    ctx: &EvalContext,
    fp: &Array2<f64>,
    beam_size: usize,
    max_len: usize,
) -> Result<(Vec<u32>, f64)> {
    let beam_size = beam_size.max(1);
    let max_len = max_len.max(1);
    let store = &ctx.ckpt.params;
    let cfg = &ctx.ckpt.model;
    // Leave room for BOS plus max_len generated tokens.
    let max_gen = max_len.min(cfg.max_seq_len.saturating_sub(1)).max(1);

    let mut active = vec![Hypothesis {
        tokens: vec![BOS],
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !active.is_empty() && active[0].generated() < max_gen {
        // (candidate logp, token, source beam)
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        for (b, hyp) in active.iter().enumerate() {
            let logits = decode_logits(store, &ctx.names, cfg, fp, &hyp.tokens)?;
            let last: Vec<f64> = logits.row(logits.nrows() - 1).to_vec();
            let logp = log_softmax_row(&last);
            for (tok, lp) in logp.iter().enumerate() {
                let tok = tok as u32;
                // Only words and EOS may be emitted.
                if tok == PAD || tok == BOS || tok == UNK {
                    continue;
                }
                candidates.push((hyp.log_prob + lp, tok, b));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.2.cmp(&b.2))
        });
        let mut next_active = Vec::with_capacity(beam_size);
        for &(logp, tok, b) in candidates.iter().take(beam_size) {
            let mut tokens = active[b].tokens.clone();
            tokens.push(tok);
            let hyp = Hypothesis {
                tokens,
                log_prob: logp,
                finished: tok == EOS,
            };
            if hyp.finished {
                finished.push(hyp);
            } else {
                next_active.push(hyp);
            }
        }
        active = next_active;
    }
    // Hypotheses that hit the length limit compete without EOS.
    finished.extend(active);

    finished.sort_by(|a, b| {
        b.score()
            .partial_cmp(&a.score())
            .unwrap()
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    let best = finished.first().expect("at least one hypothesis");
    let generated: Vec<u32> = best.tokens[1..].to_vec();
    Ok((generated, best.score()))
}
