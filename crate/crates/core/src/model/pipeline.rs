//! End-to-end forward/backward paths tying frontends, fusion, encoder,
//! decoder and the two losses together.

use ndarray::{s, Array2, Axis};

use crate::error::Result;

use super::config::{ModelConfig, BOS};
use super::loss::{masked_cluster_loss, sequence_loss};
use super::net::{decoder_bwd, decoder_fwd, encode_bwd, encode_fwd, frontend_fwd, fuse_frames};
use super::ops::{linear_bwd_into, linear_fwd};
use super::params::{GradStore, Names, ParameterStore};

/// Project the present modalities, concatenate with zero substitution and
/// apply AV-Fusion. Returns `(a_proj, v_proj, fused, fm)`.
#[allow(clippy::type_complexity)]
fn fusion_fwd(
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    audio: Option<&Array2<f64>>,
    visual: Option<&Array2<f64>>,
) -> Result<(Option<Array2<f64>>, Option<Array2<f64>>, Array2<f64>, Array2<f64>)> {
    let a_proj = match audio {
        Some(a) => Some(frontend_fwd(a, store, &names.audio_w, &names.audio_b, cfg.audio_dim)?),
        None => None,
    };
    let v_proj = match visual {
        Some(v) => Some(frontend_fwd(v, store, &names.visual_w, &names.visual_b, cfg.visual_dim)?),
        None => None,
    };
    let fused = fuse_frames(a_proj.as_ref(), v_proj.as_ref(), cfg.d_model)?;
    let fm = linear_fwd(&fused, store.p(&names.fusion_w), store.p(&names.fusion_b));
    Ok((a_proj, v_proj, fused, fm))
}

#[allow(clippy::too_many_arguments)]
fn fusion_bwd(
    grads: &mut GradStore,
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    audio: Option<&Array2<f64>>,
    visual: Option<&Array2<f64>>,
    fused: &Array2<f64>,
    d_fm: &Array2<f64>,
) {
    let d = cfg.d_model;
    let d_fused = linear_bwd_into(
        grads,
        fused,
        store.p(&names.fusion_w),
        d_fm,
        &names.fusion_w,
        &names.fusion_b,
    );
    if let Some(a) = audio {
        let d_a_proj = d_fused.slice(s![.., 0..d]).to_owned();
        linear_bwd_into(
            grads,
            a,
            store.p(&names.audio_w),
            &d_a_proj,
            &names.audio_w,
            &names.audio_b,
        );
    }
    if let Some(v) = visual {
        let d_v_proj = d_fused.slice(s![.., d..2 * d]).to_owned();
        linear_bwd_into(
            grads,
            v,
            store.p(&names.visual_w),
            &d_v_proj,
            &names.visual_w,
            &names.visual_b,
        );
    }
}

/// Sequence-to-sequence loss for one utterance. `targets` are word ids
/// terminated by EOS; the decoder prefix is BOS followed by the targets less
/// their last token. Backward runs when `grads` is given.
pub fn s2s_loss(
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    audio: Option<&Array2<f64>>,
    visual: Option<&Array2<f64>>,
    targets: &[u32],
    prompts_enabled: bool,
    grads: Option<&mut GradStore>,
) -> Result<f64> {
    let (_, _, fused, fm) = fusion_fwd(store, names, cfg, audio, visual)?;
    let (fp, enc_cache) = encode_fwd(&fm, store, names, cfg, prompts_enabled);

    let mut prefix = Vec::with_capacity(targets.len());
    prefix.push(BOS);
    prefix.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
    let (logits, dec_cache) = decoder_fwd(&fp, &prefix, store, names, cfg)?;
    let (loss, dlogits) = sequence_loss(&logits, targets)?;

    if let Some(grads) = grads {
        let d_fp = decoder_bwd(grads, &dec_cache, store, names, cfg, &dlogits);
        let d_fm = encode_bwd(grads, &enc_cache, store, names, cfg, &d_fp);
        fusion_bwd(grads, store, names, cfg, audio, visual, &fused, &d_fm);
    }
    Ok(loss)
}

/// Decoder-side loss against a precomputed encoder memory; used when the
/// whole encoder stack is frozen and its output per utterance is constant.
pub fn s2s_loss_from_memory(
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    fp: &Array2<f64>,
    targets: &[u32],
    grads: Option<&mut GradStore>,
) -> Result<f64> {
    let mut prefix = Vec::with_capacity(targets.len());
    prefix.push(BOS);
    prefix.extend_from_slice(&targets[..targets.len().saturating_sub(1)]);
    let (logits, dec_cache) = decoder_fwd(fp, &prefix, store, names, cfg)?;
    let (loss, dlogits) = sequence_loss(&logits, targets)?;
    if let Some(grads) = grads {
        decoder_bwd(grads, &dec_cache, store, names, cfg, &dlogits);
    }
    Ok(loss)
}

pub struct MaskedStepOutcome {
    pub loss: f64,
    pub empty_mask: bool,
    pub correct: usize,
    pub masked: usize,
}

/// Masked cluster-prediction loss for one utterance: fused features have
/// masked rows replaced by the learned mask embedding before encoding, and
/// the K-way head is scored on masked frames only.
#[allow(clippy::too_many_arguments)]
pub fn masked_cluster_step(
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    audio: Option<&Array2<f64>>,
    visual: Option<&Array2<f64>>,
    mask: &[bool],
    cluster_targets: &[usize],
    grads: Option<&mut GradStore>,
) -> Result<MaskedStepOutcome> {
    let (_, _, fused, fm) = fusion_fwd(store, names, cfg, audio, visual)?;
    let mask_emb = store.p(&names.mask_emb);
    let mut fm_masked = fm;
    for (i, &masked) in mask.iter().enumerate() {
        if masked {
            fm_masked.row_mut(i).assign(&mask_emb.row(0));
        }
    }
    let (fp, enc_cache) = encode_fwd(&fm_masked, store, names, cfg, false);
    let logits = linear_fwd(&fp, store.p(&names.cluster_w), store.p(&names.cluster_b));
    let out = masked_cluster_loss(&logits, cluster_targets, mask)?;

    if let Some(grads) = grads {
        if !out.empty_mask {
            let d_fp = linear_bwd_into(
                grads,
                &fp,
                store.p(&names.cluster_w),
                &out.dlogits,
                &names.cluster_w,
                &names.cluster_b,
            );
            let d_fm_masked = encode_bwd(grads, &enc_cache, store, names, cfg, &d_fp);
            // Masked rows feed the mask embedding; the rest flows to fusion.
            if grads.tracks(&names.mask_emb) {
                let mut d_mask = Array2::zeros((1, cfg.d_model));
                for (i, &masked) in mask.iter().enumerate() {
                    if masked {
                        let mut row = d_mask.row_mut(0);
                        row += &d_fm_masked.index_axis(Axis(0), i);
                    }
                }
                grads.add(&names.mask_emb, d_mask);
            }
            let mut d_fm = d_fm_masked;
            for (i, &masked) in mask.iter().enumerate() {
                if masked {
                    d_fm.row_mut(i).fill(0.0);
                }
            }
            fusion_bwd(grads, store, names, cfg, audio, visual, &fused, &d_fm);
        }
    }
    Ok(MaskedStepOutcome {
        loss: out.loss,
        empty_mask: out.empty_mask,
        correct: out.correct,
        masked: out.masked,
    })
}

/// Inference-only encoding of an utterance's features into phoneme space.
pub fn encode_features(
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    audio: Option<&Array2<f64>>,
    visual: Option<&Array2<f64>>,
    prompts_enabled: bool,
) -> Result<Array2<f64>> {
    let (_, _, _, fm) = fusion_fwd(store, names, cfg, audio, visual)?;
    let (fp, _) = encode_fwd(&fm, store, names, cfg, prompts_enabled);
    Ok(fp)
}

/// Logits over the vocabulary for each position of a BOS-prefixed token
/// sequence.
pub fn decode_logits(
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    fp: &Array2<f64>,
    prefix: &[u32],
) -> Result<Array2<f64>> {
    let (logits, _) = decoder_fwd(fp, prefix, store, names, cfg)?;
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::EOS;
    use crate::model::params::{add_prompt_params, init_params};
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            encoder_layers: 2,
            decoder_layers: 1,
            heads: 2,
            ffn_dim: 12,
            clusters_k: 3,
            prompt_clusters_n: 2,
            audio_dim: 3,
            visual_dim: 3,
            vocab_size: 9,
            max_seq_len: 12,
            use_positional: true,
        }
    }

    fn random_input(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_substitution_purity() {
        // With audio absent the output is a function of visual input only;
        // perturbing the visual input changes the loss.
        let cfg = tiny_cfg();
        let store = init_params(&cfg, 21);
        let names = Names::new(&cfg);
        let visual = random_input(4, 3, 1);
        let targets = vec![4u32, 5, EOS];
        let base = s2s_loss(&store, &names, &cfg, None, Some(&visual), &targets, false, None).unwrap();
        let again = s2s_loss(&store, &names, &cfg, None, Some(&visual), &targets, false, None).unwrap();
        assert_eq!(base, again, "visual-only path must be deterministic");
        let mut perturbed = visual.clone();
        perturbed[[0, 0]] += 0.25;
        let moved = s2s_loss(&store, &names, &cfg, None, Some(&perturbed), &targets, false, None).unwrap();
        assert_ne!(base, moved, "perturbing the supplied modality must matter");
    }

    #[test]
    fn prompt_bank_at_init_is_a_no_op() {
        let cfg = tiny_cfg();
        let mut store = init_params(&cfg, 22);
        let names = Names::new(&cfg);
        let visual = random_input(5, 3, 2);
        let fp_plain = encode_features(&store, &names, &cfg, None, Some(&visual), false).unwrap();
        add_prompt_params(&mut store, &cfg, 99);
        let fp_prompted = encode_features(&store, &names, &cfg, None, Some(&visual), true).unwrap();
        assert_eq!(fp_plain, fp_prompted, "zero-initialized prompts must be bit-identical");
    }

    #[test]
    fn cluster_weights_are_normalized_rows() {
        use crate::model::net::cluster_prompt_apply;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let t = rng.gen_range(1..6);
            let n = rng.gen_range(1..5);
            let d = rng.gen_range(2..7);
            let x = Array2::from_shape_fn((t, d), |_| rng.gen_range(-3.0..3.0));
            let mw = Array2::from_shape_fn((d, n), |_| rng.gen_range(-2.0..2.0));
            let mb = Array2::from_shape_fn((1, n), |_| rng.gen_range(-1.0..1.0));
            let c = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
            let (_, cache) = cluster_prompt_apply(&x, &mw, &mb, &c);
            for row in cache.u.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
