//! Composite model graph: frontends, modality fusion, the prompt-aware
//! encoder, and the autoregressive decoder.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

use super::config::ModelConfig;
use super::ops::{
    gelu_bwd, gelu_fwd, layernorm_bwd_into, layernorm_fwd, linear_bwd_into, linear_fwd, mha_bwd_into,
    mha_fwd, positional_encoding, softmax_rows, softmax_rows_bwd, sum_rows, AttnCache, LnCache,
};
use super::params::{EncLayerNames, GradStore, Names, ParameterStore};

/// Per-frame affine projection into the embedding space; no temporal mixing.
pub fn frontend_fwd(
    features: &Array2<f64>,
    store: &ParameterStore,
    w_name: &str,
    b_name: &str,
    expected_in: usize,
) -> Result<Array2<f64>> {
    if features.ncols() != expected_in {
        return Err(Error::Validation(format!(
            "frontend expected {expected_in} input dims, got {}",
            features.ncols()
        )));
    }
    Ok(linear_fwd(features, store.p(w_name), store.p(b_name)))
}

/// Concatenate per-frame (audio, visual) embeddings, substituting the zero
/// vector for an absent modality.
pub fn fuse_frames(
    audio: Option<&Array2<f64>>,
    visual: Option<&Array2<f64>>,
    d: usize,
) -> Result<Array2<f64>> {
    let t = match (audio, visual) {
        (Some(a), Some(v)) => {
            if a.nrows() != v.nrows() {
                return Err(Error::Validation(format!(
                    "modality frame counts differ: audio {} vs visual {}",
                    a.nrows(),
                    v.nrows()
                )));
            }
            a.nrows()
        }
        (Some(a), None) => a.nrows(),
        (None, Some(v)) => v.nrows(),
        (None, None) => {
            return Err(Error::Validation(
                "fusion requires at least one modality".into(),
            ))
        }
    };
    let mut fused = Array2::zeros((t, 2 * d));
    if let Some(a) = audio {
        debug_assert_eq!(a.ncols(), d);
        fused.slice_mut(s![.., 0..d]).assign(a);
    }
    if let Some(v) = visual {
        debug_assert_eq!(v.ncols(), d);
        fused.slice_mut(s![.., d..2 * d]).assign(v);
    }
    Ok(fused)
}

#[derive(Debug, Clone)]
pub struct PromptCache {
    /// Layer input before the prompt shift.
    pub x: Array2<f64>,
    /// Frame-wise cluster weights, T x N; rows sum to 1.
    pub u: Array2<f64>,
}

/// Cluster Prompt: u = softmax(x meta_w + meta_b) per frame, x' = x + u c.
pub fn cluster_prompt_apply(
    x: &Array2<f64>,
    meta_w: &Array2<f64>,
    meta_b: &Array2<f64>,
    clusters: &Array2<f64>,
) -> (Array2<f64>, PromptCache) {
    let scores = linear_fwd(x, meta_w, meta_b);
    let u = softmax_rows(&scores);
    let shifted = x + &u.dot(clusters);
    (
        shifted,
        PromptCache {
            x: x.clone(),
            u,
        },
    )
}

fn cluster_prompt_bwd_into(
    grads: &mut GradStore,
    cache: &PromptCache,
    meta_w: &Array2<f64>,
    clusters: &Array2<f64>,
    d_shifted: &Array2<f64>,
    clusters_name: &str,
    meta_w_name: &str,
    meta_b_name: &str,
) -> Array2<f64> {
    if grads.tracks(clusters_name) {
        grads.add(clusters_name, cache.u.t().dot(d_shifted));
    }
    let du = d_shifted.dot(&clusters.t());
    let dscores = softmax_rows_bwd(&cache.u, &du);
    if grads.tracks(meta_w_name) {
        grads.add(meta_w_name, cache.x.t().dot(&dscores));
    }
    if grads.tracks(meta_b_name) {
        grads.add(meta_b_name, sum_rows(&dscores));
    }
    d_shifted + &dscores.dot(&meta_w.t())
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    pub input: Array2<f64>,
    pub z1: Array2<f64>,
    pub act: Array2<f64>,
}

fn ffn_fwd(x: &Array2<f64>, store: &ParameterStore, names: &super::params::FfnNames) -> (Array2<f64>, FfnCache) {
    let z1 = linear_fwd(x, store.p(&names.w1), store.p(&names.b1));
    let act = gelu_fwd(&z1);
    let out = linear_fwd(&act, store.p(&names.w2), store.p(&names.b2));
    (
        out,
        FfnCache {
            input: x.clone(),
            z1,
            act,
        },
    )
}

fn ffn_bwd_into(
    grads: &mut GradStore,
    cache: &FfnCache,
    store: &ParameterStore,
    names: &super::params::FfnNames,
    dout: &Array2<f64>,
) -> Array2<f64> {
    let dact = linear_bwd_into(grads, &cache.act, store.p(&names.w2), dout, &names.w2, &names.b2);
    let dz1 = gelu_bwd(&cache.z1, &dact);
    linear_bwd_into(grads, &cache.input, store.p(&names.w1), &dz1, &names.w1, &names.b1)
}

#[derive(Debug)]
pub struct EncLayerCache {
    prompt: Option<PromptCache>,
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ffn: FfnCache,
}

#[derive(Debug)]
pub struct EncodeCache {
    layers: Vec<EncLayerCache>,
}

fn encoder_layer_fwd(
    x: &Array2<f64>,
    store: &ParameterStore,
    ln: &EncLayerNames,
    prompt: Option<&super::params::PromptNames>,
    heads: usize,
) -> (Array2<f64>, EncLayerCache) {
    let (x_in, prompt_cache) = match prompt {
        Some(p) => {
            let (shifted, cache) = cluster_prompt_apply(
                x,
                store.p(&p.meta_w),
                store.p(&p.meta_b),
                store.p(&p.clusters),
            );
            (shifted, Some(cache))
        }
        None => (x.clone(), None),
    };
    let (h1, ln1) = layernorm_fwd(&x_in, store.p(&ln.ln1.gamma), store.p(&ln.ln1.beta));
    let (a, attn) = mha_fwd(&h1, &h1, store, &ln.attn, heads, false);
    let x1 = &x_in + &a;
    let (h2, ln2) = layernorm_fwd(&x1, store.p(&ln.ln2.gamma), store.p(&ln.ln2.beta));
    let (f, ffn) = ffn_fwd(&h2, store, &ln.ffn);
    let out = &x1 + &f;
    (
        out,
        EncLayerCache {
            prompt: prompt_cache,
            ln1,
            attn,
            ln2,
            ffn,
        },
    )
}

fn encoder_layer_bwd(
    grads: &mut GradStore,
    cache: &EncLayerCache,
    store: &ParameterStore,
    ln: &EncLayerNames,
    prompt: Option<&super::params::PromptNames>,
    dout: &Array2<f64>,
) -> Array2<f64> {
    // out = x1 + ffn(ln2(x1))
    let d_f = dout;
    let d_h2 = ffn_bwd_into(grads, &cache.ffn, store, &ln.ffn, d_f);
    let mut d_x1 = dout.clone();
    d_x1 += &layernorm_bwd_into(
        grads,
        &cache.ln2,
        store.p(&ln.ln2.gamma),
        &d_h2,
        &ln.ln2.gamma,
        &ln.ln2.beta,
    );
    // x1 = x_in + attn(ln1(x_in))
    let (dq, dkv) = mha_bwd_into(grads, &cache.attn, store, &ln.attn, &d_x1);
    let d_h1 = dq + dkv;
    let mut d_xin = d_x1;
    d_xin += &layernorm_bwd_into(
        grads,
        &cache.ln1,
        store.p(&ln.ln1.gamma),
        &d_h1,
        &ln.ln1.gamma,
        &ln.ln1.beta,
    );
    match (&cache.prompt, prompt) {
        (Some(pc), Some(p)) => cluster_prompt_bwd_into(
            grads,
            pc,
            store.p(&p.meta_w),
            store.p(&p.clusters),
            &d_xin,
            &p.clusters,
            &p.meta_w,
            &p.meta_b,
        ),
        _ => d_xin,
    }
}

/// Encode fused features into the shared phoneme space. When
/// `prompts_enabled` and the store carries a prompt bank, each layer's input
/// is shifted by its cluster prompt first. An empty layer stack is the
/// identity.
pub fn encode_fwd(
    fm: &Array2<f64>,
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    prompts_enabled: bool,
) -> (Array2<f64>, EncodeCache) {
    let t = fm.nrows();
    if cfg.encoder_layers == 0 {
        return (fm.clone(), EncodeCache { layers: Vec::new() });
    }
    // Scale content up before adding positions so the sinusoids do not
    // dominate the residual stream at initialization.
    let scale = (cfg.d_model as f64).sqrt();
    let mut x = fm * scale;
    if cfg.use_positional {
        x += &positional_encoding(t, cfg.d_model);
    }
    let use_prompts = prompts_enabled && super::params::has_prompt_params(store);
    let mut layers = Vec::with_capacity(cfg.encoder_layers);
    for j in 0..cfg.encoder_layers {
        let prompt = if use_prompts { Some(&names.prompt[j]) } else { None };
        let (next, cache) = encoder_layer_fwd(&x, store, &names.encoder[j], prompt, cfg.heads);
        layers.push(cache);
        x = next;
    }
    (x, EncodeCache { layers })
}

pub fn encode_bwd(
    grads: &mut GradStore,
    cache: &EncodeCache,
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    d_fp: &Array2<f64>,
) -> Array2<f64> {
    let mut d = d_fp.clone();
    for (j, layer_cache) in cache.layers.iter().enumerate().rev() {
        let prompt = if layer_cache.prompt.is_some() {
            Some(&names.prompt[j])
        } else {
            None
        };
        d = encoder_layer_bwd(grads, layer_cache, store, &names.encoder[j], prompt, &d);
    }
    if cache.layers.is_empty() {
        return d;
    }
    // Positional encodings are additive constants; only the content scaling
    // enters the gradient.
    d * (cfg.d_model as f64).sqrt()
}

#[derive(Debug)]
struct DecLayerCache {
    ln1: LnCache,
    self_attn: AttnCache,
    ln2: LnCache,
    cross_attn: AttnCache,
    ln3: LnCache,
    ffn: FfnCache,
}

#[derive(Debug)]
pub struct DecodeCache {
    emb_rows: Vec<usize>,
    layers: Vec<DecLayerCache>,
    final_hidden: Array2<f64>,
}

/// Causal decoder over a BOS-prefixed token sequence with cross-attention
/// into the encoded memory. Returns logits for every prefix position.
pub fn decoder_fwd(
    fp: &Array2<f64>,
    prefix: &[u32],
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
) -> Result<(Array2<f64>, DecodeCache)> {
    if prefix.is_empty() || prefix[0] != super::config::BOS {
        return Err(Error::Validation("decoder prefix must start with BOS".into()));
    }
    if prefix.len() > cfg.max_seq_len {
        return Err(Error::Validation(format!(
            "prefix length {} exceeds max_seq_len {}",
            prefix.len(),
            cfg.max_seq_len
        )));
    }
    let emb = store.p(&names.token_emb);
    let emb_rows: Vec<usize> = prefix.iter().map(|&t| t as usize).collect();
    for &r in &emb_rows {
        if r >= emb.nrows() {
            return Err(Error::Validation(format!("token id {r} outside vocabulary")));
        }
    }
    let td = prefix.len();
    let scale = (cfg.d_model as f64).sqrt();
    let mut y = Array2::zeros((td, cfg.d_model));
    for (i, &r) in emb_rows.iter().enumerate() {
        y.row_mut(i).assign(&emb.row(r));
    }
    y *= scale;
    y += &positional_encoding(td, cfg.d_model);

    let mut layers = Vec::with_capacity(cfg.decoder_layers);
    for ln in &names.decoder {
        let (h1, ln1) = layernorm_fwd(&y, store.p(&ln.ln1.gamma), store.p(&ln.ln1.beta));
        let (a, self_attn) = mha_fwd(&h1, &h1, store, &ln.self_attn, cfg.heads, true);
        let y1 = &y + &a;
        let (h2, ln2) = layernorm_fwd(&y1, store.p(&ln.ln2.gamma), store.p(&ln.ln2.beta));
        let (c, cross_attn) = mha_fwd(&h2, fp, store, &ln.cross_attn, cfg.heads, false);
        let y2 = &y1 + &c;
        let (h3, ln3) = layernorm_fwd(&y2, store.p(&ln.ln3.gamma), store.p(&ln.ln3.beta));
        let (f, ffn) = ffn_fwd(&h3, store, &ln.ffn);
        y = &y2 + &f;
        layers.push(DecLayerCache {
            ln1,
            self_attn,
            ln2,
            cross_attn,
            ln3,
            ffn,
        });
    }
    let logits = linear_fwd(&y, store.p(&names.head_w), store.p(&names.head_b));
    Ok((
        logits,
        DecodeCache {
            emb_rows,
            layers,
            final_hidden: y,
        },
    ))
}

/// Backward through the decoder; returns the gradient with respect to the
/// encoded memory `fp`.
pub fn decoder_bwd(
    grads: &mut GradStore,
    cache: &DecodeCache,
    store: &ParameterStore,
    names: &Names,
    cfg: &ModelConfig,
    dlogits: &Array2<f64>,
) -> Array2<f64> {
    let mut dy = linear_bwd_into(
        grads,
        &cache.final_hidden,
        store.p(&names.head_w),
        dlogits,
        &names.head_w,
        &names.head_b,
    );
    let mut d_fp: Option<Array2<f64>> = None;
    for (ln, layer_cache) in names.decoder.iter().zip(cache.layers.iter()).rev() {
        // y = y2 + ffn(ln3(y2))
        let d_h3 = ffn_bwd_into(grads, &layer_cache.ffn, store, &ln.ffn, &dy);
        let mut d_y2 = dy;
        d_y2 += &layernorm_bwd_into(
            grads,
            &layer_cache.ln3,
            store.p(&ln.ln3.gamma),
            &d_h3,
            &ln.ln3.gamma,
            &ln.ln3.beta,
        );
        // y2 = y1 + cross(ln2(y1), fp)
        let (d_h2, d_mem) = mha_bwd_into(grads, &layer_cache.cross_attn, store, &ln.cross_attn, &d_y2);
        match &mut d_fp {
            Some(acc) => *acc += &d_mem,
            None => d_fp = Some(d_mem),
        }
        let mut d_y1 = d_y2;
        d_y1 += &layernorm_bwd_into(
            grads,
            &layer_cache.ln2,
            store.p(&ln.ln2.gamma),
            &d_h2,
            &ln.ln2.gamma,
            &ln.ln2.beta,
        );
        // y1 = y + self(ln1(y))
        let (dq, dkv) = mha_bwd_into(grads, &layer_cache.self_attn, store, &ln.self_attn, &d_y1);
        let d_h1 = dq + dkv;
        let mut d_y = d_y1;
        d_y += &layernorm_bwd_into(
            grads,
            &layer_cache.ln1,
            store.p(&ln.ln1.gamma),
            &d_h1,
            &ln.ln1.gamma,
            &ln.ln1.beta,
        );
        dy = d_y;
    }
    // Scatter embedding gradients through the sqrt(D) content scaling.
    if grads.tracks(&names.token_emb) {
        let emb = store.p(&names.token_emb);
        let scale = (cfg.d_model as f64).sqrt();
        let mut d_emb = Array2::zeros(emb.raw_dim());
        for (i, &r) in cache.emb_rows.iter().enumerate() {
            let mut row = d_emb.row_mut(r);
            row.scaled_add(scale, &dy.index_axis(Axis(0), i));
        }
        grads.add(&names.token_emb, d_emb);
    }
    d_fp.expect("decoder has at least one layer")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{ModelConfig, BOS};
    use crate::model::params::{init_params, Names};
    use ndarray::array;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            heads: 2,
            ffn_dim: 8,
            clusters_k: 3,
            prompt_clusters_n: 2,
            audio_dim: 2,
            visual_dim: 2,
            vocab_size: 7,
            max_seq_len: 8,
            use_positional: true,
        }
    }

    #[test]
    fn fuse_zero_substitution() {
        let audio = array![[1.0, 2.0]];
        let visual = array![[3.0, 4.0]];
        let a_only = fuse_frames(Some(&audio), None, 2).unwrap();
        assert_eq!(a_only, array![[1.0, 2.0, 0.0, 0.0]]);
        let v_only = fuse_frames(None, Some(&visual), 2).unwrap();
        assert_eq!(v_only, array![[0.0, 0.0, 3.0, 4.0]]);
        let both = fuse_frames(Some(&audio), Some(&visual), 2).unwrap();
        assert_eq!(both, array![[1.0, 2.0, 3.0, 4.0]]);
        assert!(fuse_frames(None, None, 2).is_err());
    }

    #[test]
    fn fuse_rejects_mismatched_frames() {
        let a = Array2::zeros((3, 2));
        let v = Array2::zeros((4, 2));
        assert!(fuse_frames(Some(&a), Some(&v), 2).is_err());
    }

    #[test]
    fn empty_encoder_stack_is_identity() {
        let mut cfg = tiny_cfg();
        cfg.encoder_layers = 0;
        let store = init_params(&cfg, 1);
        let names = Names::new(&cfg);
        let fm = array![[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, -0.5]];
        let (fp, _) = encode_fwd(&fm, &store, &names, &cfg, false);
        assert_eq!(fp, fm);
    }

    #[test]
    fn permutation_equivariance_without_positions() {
        let mut cfg = tiny_cfg();
        cfg.use_positional = false;
        let store = init_params(&cfg, 2);
        let names = Names::new(&cfg);
        let fm = array![
            [0.1, 0.2, 0.3, 0.4],
            [1.0, -1.0, 0.5, -0.5],
            [-0.2, 0.8, 0.0, 0.3]
        ];
        let (fp, _) = encode_fwd(&fm, &store, &names, &cfg, false);
        // Reverse the frames.
        let mut fm_rev = fm.clone();
        for i in 0..3 {
            fm_rev.row_mut(i).assign(&fm.row(2 - i));
        }
        let (fp_rev, _) = encode_fwd(&fm_rev, &store, &names, &cfg, false);
        for i in 0..3 {
            for j in 0..4 {
                let a = fp[[i, j]];
                let b = fp_rev[[2 - i, j]];
                assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn single_layer_encoder_matches_straight_line_oracle() {
        // Independent loop-based re-implementation of one pre-norm layer on a
        // 2x4 input, checked against the production path.
        let mut cfg = tiny_cfg();
        cfg.use_positional = false;
        let store = init_params(&cfg, 3);
        let names = Names::new(&cfg);
        let x_in = array![[0.5, -0.3, 0.8, 0.1], [-0.7, 0.2, 0.4, -0.9]];
        let (got, _) = encode_fwd(&x_in, &store, &names, &cfg, false);
        let x = &x_in * 2.0; // sqrt(d_model) content scaling

        let d = 4usize;
        let heads = 2usize;
        let dh = d / heads;
        let ln = |x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros(x.raw_dim());
            for i in 0..x.nrows() {
                let row: Vec<f64> = x.row(i).to_vec();
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rstd = 1.0 / (var + 1e-5).sqrt();
                for j in 0..d {
                    out[[i, j]] = (row[j] - mean) * rstd * g[[0, j]] + b[[0, j]];
                }
            }
            out
        };
        let lin = |x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros((x.nrows(), w.ncols()));
            for i in 0..x.nrows() {
                for j in 0..w.ncols() {
                    let mut acc = b[[0, j]];
                    for k in 0..x.ncols() {
                        acc += x[[i, k]] * w[[k, j]];
                    }
                    out[[i, j]] = acc;
                }
            }
            out
        };
        let p = |n: &str| store.p(n);
        let h1 = ln(&x, p("encoder.layer.0.ln1.gamma"), p("encoder.layer.0.ln1.beta"));
        let q = lin(&h1, p("encoder.layer.0.attn.wq"), p("encoder.layer.0.attn.bq"));
        let k = lin(&h1, p("encoder.layer.0.attn.wk"), p("encoder.layer.0.attn.bk"));
        let v = lin(&h1, p("encoder.layer.0.attn.wv"), p("encoder.layer.0.attn.bv"));
        let mut ctx = Array2::zeros((2, d));
        for h in 0..heads {
            for i in 0..2 {
                let mut scores = [0.0f64; 2];
                for t in 0..2 {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q[[i, h * dh + c]] * k[[t, h * dh + c]];
                    }
                    scores[t] = s / (dh as f64).sqrt();
                }
                let m = scores[0].max(scores[1]);
                let e0 = (scores[0] - m).exp();
                let e1 = (scores[1] - m).exp();
                let z = e0 + e1;
                for c in 0..dh {
                    ctx[[i, h * dh + c]] = (e0 * v[[0, h * dh + c]] + e1 * v[[1, h * dh + c]]) / z;
                }
            }
        }
        let a = lin(&ctx, p("encoder.layer.0.attn.wo"), p("encoder.layer.0.attn.bo"));
        let x1 = &x + &a;
        let h2 = ln(&x1, p("encoder.layer.0.ln2.gamma"), p("encoder.layer.0.ln2.beta"));
        let z1 = lin(&h2, p("encoder.layer.0.ffn.w1"), p("encoder.layer.0.ffn.b1"));
        let act = gelu_fwd(&z1);
        let f = lin(&act, p("encoder.layer.0.ffn.w2"), p("encoder.layer.0.ffn.b2"));
        let want = &x1 + &f;

        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "encoder {a} vs oracle {b}");
        }
    }

    #[test]
    fn prompt_identity_at_zero_clusters() {
        let x = array![[0.4, -0.2, 0.9, 0.0], [1.2, 0.3, -0.8, 0.5]];
        let meta_w = array![[0.5, -0.1], [0.2, 0.7], [-0.4, 0.3], [0.9, -0.6]];
        let meta_b = array![[0.1, -0.2]];
        let clusters = Array2::<f64>::zeros((2, 4));
        let (shifted, cache) = cluster_prompt_apply(&x, &meta_w, &meta_b, &clusters);
        assert_eq!(shifted, x);
        for row in cache.u.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prompt_singleton_cluster_adds_constant_row() {
        let x = array![[0.4, -0.2, 0.9, 0.0], [1.2, 0.3, -0.8, 0.5]];
        let meta_w = Array2::from_elem((4, 1), 0.3);
        let meta_b = Array2::zeros((1, 1));
        let clusters = array![[0.5, -1.0, 0.25, 2.0]];
        let (shifted, cache) = cluster_prompt_apply(&x, &meta_w, &meta_b, &clusters);
        for i in 0..2 {
            assert_eq!(cache.u[[i, 0]], 1.0);
            for j in 0..4 {
                assert!((shifted[[i, j]] - (x[[i, j]] + clusters[[0, j]])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn prompt_hand_case_t2_n2_d2() {
        // Hand-computed softmax and matmul.
        let x = array![[1.0, 0.0], [0.0, 1.0]];
        let meta_w = array![[1.0, -1.0], [0.5, 0.5]];
        let meta_b = array![[0.0, 0.0]];
        let clusters = array![[1.0, 2.0], [-1.0, 0.5]];
        // scores row0 = [1, -1]; row1 = [0.5, 0.5]
        // u row0 = [e^2/(1+e^2) ...] -> softmax([1,-1]) = [0.880797, 0.119203]
        // u row1 = [0.5, 0.5]
        let (shifted, cache) = cluster_prompt_apply(&x, &meta_w, &meta_b, &clusters);
        let u00 = (1.0f64).exp() / ((1.0f64).exp() + (-1.0f64).exp());
        assert!((cache.u[[0, 0]] - u00).abs() < 1e-12);
        assert!((cache.u[[1, 0]] - 0.5).abs() < 1e-12);
        // x'[0] = x[0] + u00*[1,2] + (1-u00)*[-1,0.5]
        let want00 = 1.0 + u00 * 1.0 + (1.0 - u00) * -1.0;
        let want01 = 0.0 + u00 * 2.0 + (1.0 - u00) * 0.5;
        assert!((shifted[[0, 0]] - want00).abs() < 1e-12);
        assert!((shifted[[0, 1]] - want01).abs() < 1e-12);
        // x'[1] = x[1] + 0.5*[1,2] + 0.5*[-1,0.5] = [0, 1] + [0, 1.25]
        assert!((shifted[[1, 0]] - 0.0).abs() < 1e-12);
        assert!((shifted[[1, 1]] - 2.25).abs() < 1e-12);
    }

    #[test]
    fn decoder_prefix_extension_leaves_earlier_logits_unchanged() {
        let cfg = tiny_cfg();
        let store = init_params(&cfg, 7);
        let names = Names::new(&cfg);
        let fp = array![[0.2, -0.4, 0.6, 0.1], [0.9, 0.3, -0.2, 0.5]];
        let short = [BOS, 4, 5];
        let long = [BOS, 4, 5, 6];
        let (l_short, _) = decoder_fwd(&fp, &short, &store, &names, &cfg).unwrap();
        let (l_long, _) = decoder_fwd(&fp, &long, &store, &names, &cfg).unwrap();
        for i in 0..short.len() {
            for j in 0..cfg.vocab_size {
                let a = l_short[[i, j]];
                let b = l_long[[i, j]];
                assert!(
                    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0),
                    "position {i} logit {j} changed under extension"
                );
            }
        }
    }

    #[test]
    fn zero_output_head_gives_uniform_distribution() {
        let cfg = tiny_cfg();
        let mut store = init_params(&cfg, 7);
        store.insert("output_head.weight", Array2::zeros((4, 7)));
        store.insert("output_head.bias", Array2::zeros((1, 7)));
        let names = Names::new(&cfg);
        let fp = array![[0.2, -0.4, 0.6, 0.1]];
        let (logits, _) = decoder_fwd(&fp, &[BOS], &store, &names, &cfg).unwrap();
        let p = softmax_rows(&logits);
        for j in 0..7 {
            assert!((p[[0, j]] - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_rejects_bad_prefixes() {
        let cfg = tiny_cfg();
        let store = init_params(&cfg, 7);
        let names = Names::new(&cfg);
        let fp = array![[0.2, -0.4, 0.6, 0.1]];
        assert!(decoder_fwd(&fp, &[4, 5], &store, &names, &cfg).is_err());
        let too_long: Vec<u32> = std::iter::once(BOS).chain((0..20).map(|_| 4)).collect();
        assert!(decoder_fwd(&fp, &too_long, &store, &names, &cfg).is_err());
    }

    #[test]
    fn single_layer_decoder_matches_oracle_on_one_frame_memory() {
        // One decoder layer, one memory frame: cross-attention collapses to
        // the value projection of that frame, so the layer can be re-derived
        // with straight-line code.
        let cfg = tiny_cfg();
        let store = init_params(&cfg, 11);
        let names = Names::new(&cfg);
        let fp = array![[0.3, -0.6, 0.2, 0.8]];
        let prefix = [BOS, 4];
        let (got, _) = decoder_fwd(&fp, &prefix, &store, &names, &cfg).unwrap();

        let d = 4usize;
        let p = |n: &str| store.p(n);
        let emb = p("embeddings.token");
        let mut y = Array2::zeros((2, d));
        y.row_mut(0).assign(&emb.row(BOS as usize));
        y.row_mut(1).assign(&emb.row(4));
        y *= 2.0; // sqrt(d_model)
        y += &positional_encoding(2, d);

        let ln = |x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros(x.raw_dim());
            for i in 0..x.nrows() {
                let row: Vec<f64> = x.row(i).to_vec();
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rstd = 1.0 / (var + 1e-5).sqrt();
                for j in 0..d {
                    out[[i, j]] = (row[j] - mean) * rstd * g[[0, j]] + b[[0, j]];
                }
            }
            out
        };

        // Self-attention with causal mask on 2 positions.
        let h1 = ln(&y, p("decoder.layer.0.ln1.gamma"), p("decoder.layer.0.ln1.beta"));
        let q = linear_fwd(&h1, p("decoder.layer.0.self_attn.wq"), p("decoder.layer.0.self_attn.bq"));
        let k = linear_fwd(&h1, p("decoder.layer.0.self_attn.wk"), p("decoder.layer.0.self_attn.bk"));
        let v = linear_fwd(&h1, p("decoder.layer.0.self_attn.wv"), p("decoder.layer.0.self_attn.bv"));
        let dh = 2usize;
        let mut ctx = Array2::zeros((2, d));
        for h in 0..2 {
            // position 0 attends only to itself
            for c in 0..dh {
                ctx[[0, h * dh + c]] = v[[0, h * dh + c]];
            }
            // position 1 attends to 0 and 1
            let mut s0 = 0.0;
            let mut s1 = 0.0;
            for c in 0..dh {
                s0 += q[[1, h * dh + c]] * k[[0, h * dh + c]];
                s1 += q[[1, h * dh + c]] * k[[1, h * dh + c]];
            }
            s0 /= (dh as f64).sqrt();
            s1 /= (dh as f64).sqrt();
            let m = s0.max(s1);
            let e0 = (s0 - m).exp();
            let e1 = (s1 - m).exp();
            let z = e0 + e1;
            for c in 0..dh {
                ctx[[1, h * dh + c]] = (e0 * v[[0, h * dh + c]] + e1 * v[[1, h * dh + c]]) / z;
            }
        }
        let a = linear_fwd(&ctx, p("decoder.layer.0.self_attn.wo"), p("decoder.layer.0.self_attn.bo"));
        let y1 = &y + &a;

        // Cross-attention over a single memory frame: softmax over one key is 1.
        let h2 = ln(&y1, p("decoder.layer.0.ln2.gamma"), p("decoder.layer.0.ln2.beta"));
        let _ = h2; // queries do not matter with one key
        let vmem = linear_fwd(&fp, p("decoder.layer.0.cross_attn.wv"), p("decoder.layer.0.cross_attn.bv"));
        let mut cctx = Array2::zeros((2, d));
        for i in 0..2 {
            cctx.row_mut(i).assign(&vmem.row(0));
        }
        let c = linear_fwd(&cctx, p("decoder.layer.0.cross_attn.wo"), p("decoder.layer.0.cross_attn.bo"));
        let y2 = &y1 + &c;

        let h3 = ln(&y2, p("decoder.layer.0.ln3.gamma"), p("decoder.layer.0.ln3.beta"));
        let z1 = linear_fwd(&h3, p("decoder.layer.0.ffn.w1"), p("decoder.layer.0.ffn.b1"));
        let act = gelu_fwd(&z1);
        let f = linear_fwd(&act, p("decoder.layer.0.ffn.w2"), p("decoder.layer.0.ffn.b2"));
        let yf = &y2 + &f;
        let want = linear_fwd(&yf, p("output_head.weight"), p("output_head.bias"));

        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "decoder {a} vs oracle {b}");
        }
    }
}
