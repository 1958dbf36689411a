//! Numerical primitives with hand-derived backward passes.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::params::{AttnNames, GradStore};
use crate::model::params::ParameterStore;

pub const LN_EPS: f64 = 1e-5;

pub fn sum_rows(x: &Array2<f64>) -> Array2<f64> {
    x.sum_axis(Axis(0)).insert_axis(Axis(0))
}

/// y = x w + b, with b a 1 x out row broadcast over rows.
pub fn linear_fwd(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += &b.row(0);
    y
}

/// Accumulates dW and db into `grads` (when tracked) and returns dx.
pub fn linear_bwd_into(
    grads: &mut GradStore,
    x: &Array2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    w_name: &str,
    b_name: &str,
) -> Array2<f64> {
    if grads.tracks(w_name) {
        grads.add(w_name, x.t().dot(dy));
    }
    if grads.tracks(b_name) {
        grads.add(b_name, sum_rows(dy));
    }
    dy.dot(&w.t())
}

#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub fn layernorm_fwd(x: &Array2<f64>, gamma: &Array2<f64>, beta: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).unwrap();
    let mut xhat = x.clone();
    for (mut row, &m) in xhat.rows_mut().into_iter().zip(mean.iter()) {
        row.mapv_inplace(|v| v - m);
    }
    let rstd = xhat
        .rows()
        .into_iter()
        .map(|row| {
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            1.0 / (var + LN_EPS).sqrt()
        })
        .collect::<Array1<f64>>();
    for (mut row, &r) in xhat.rows_mut().into_iter().zip(rstd.iter()) {
        row.mapv_inplace(|v| v * r);
    }
    let mut y = xhat.clone();
    y *= &gamma.row(0);
    y += &beta.row(0);
    (y, LnCache { xhat, rstd })
}

pub fn layernorm_bwd_into(
    grads: &mut GradStore,
    cache: &LnCache,
    gamma: &Array2<f64>,
    dy: &Array2<f64>,
    gamma_name: &str,
    beta_name: &str,
) -> Array2<f64> {
    let d = dy.ncols() as f64;
    if grads.tracks(gamma_name) {
        grads.add(gamma_name, sum_rows(&(dy * &cache.xhat)));
    }
    if grads.tracks(beta_name) {
        grads.add(beta_name, sum_rows(dy));
    }
    let mut g = dy.clone();
    g *= &gamma.row(0);
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, row_g) in g.rows().into_iter().enumerate() {
        let xhat_row = cache.xhat.row(i);
        let mean_g = row_g.sum() / d;
        let mean_gx = row_g
            .iter()
            .zip(xhat_row.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        let r = cache.rstd[i];
        for j in 0..dy.ncols() {
            dx[[i, j]] = r * (row_g[j] - mean_g - xhat_row[j] * mean_gx);
        }
    }
    dx
}

/// Row-wise softmax, numerically stabilized. Rows may contain -inf entries
/// (masked positions) as long as at least one entry is finite.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// dX for y = softmax(x) given p = softmax(x) and dp.
pub fn softmax_rows_bwd(p: &Array2<f64>, dp: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(p.raw_dim());
    for i in 0..p.nrows() {
        let dot = p
            .row(i)
            .iter()
            .zip(dp.row(i).iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        for j in 0..p.ncols() {
            dx[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot);
        }
    }
    dx
}

/// Row-wise log-softmax for decoding and loss evaluation.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - log_sum).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn gelu_fwd(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
}

pub fn gelu_bwd(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = Array2::zeros(x.raw_dim());
    for (di, (&v, &g)) in dx.iter_mut().zip(x.iter().zip(dy.iter())) {
        let u = GELU_C * (v + GELU_A * v * v * v);
        let t = u.tanh();
        let sech2 = 1.0 - t * t;
        let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
        *di = g * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
    }
    dx
}

/// Sinusoidal positional encodings, T x D.
pub fn positional_encoding(t: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((t, d));
    for pos in 0..t {
        for i in 0..d / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            pe[[pos, 2 * i]] = (pos as f64 * freq).sin();
            pe[[pos, 2 * i + 1]] = (pos as f64 * freq).cos();
        }
        if d % 2 == 1 {
            let i = d / 2;
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            pe[[pos, d - 1]] = (pos as f64 * freq).sin();
        }
    }
    pe
}

#[derive(Debug, Clone)]
pub struct AttnCache {
    pub q_in: Array2<f64>,
    pub kv_in: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head attention probabilities, each Tq x Tk.
    pub probs: Vec<Array2<f64>>,
    pub ctx: Array2<f64>,
    pub causal: bool,
    pub heads: usize,
}

fn head_slice(x: &Array2<f64>, h: usize, dh: usize) -> ArrayView2<'_, f64> {
    x.slice(s![.., h * dh..(h + 1) * dh])
}

/// Multi-head attention. `q_in` supplies the queries, `kv_in` the keys and
/// values; pass the same tensor for self-attention. Causal masking requires
/// equal sequence lengths.
pub fn mha_fwd(
    q_in: &Array2<f64>,
    kv_in: &Array2<f64>,
    store: &ParameterStore,
    names: &AttnNames,
    heads: usize,
    causal: bool,
) -> (Array2<f64>, AttnCache) {
    let d = q_in.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = linear_fwd(q_in, store.p(&names.wq), store.p(&names.bq));
    let k = linear_fwd(kv_in, store.p(&names.wk), store.p(&names.bk));
    let v = linear_fwd(kv_in, store.p(&names.wv), store.p(&names.bv));

    let tq = q.nrows();
    let mut ctx = Array2::zeros((tq, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = head_slice(&q, h, dh);
        let kh = head_slice(&k, h, dh);
        let vh = head_slice(&v, h, dh);
        let mut scores = qh.dot(&kh.t());
        scores.mapv_inplace(|s| s * scale);
        if causal {
            debug_assert_eq!(scores.nrows(), scores.ncols());
            for i in 0..scores.nrows() {
                for j in i + 1..scores.ncols() {
                    scores[[i, j]] = f64::NEG_INFINITY;
                }
            }
        }
        let p = softmax_rows(&scores);
        let ctx_h = p.dot(&vh);
        ctx.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&ctx_h);
        probs.push(p);
    }
    let out = linear_fwd(&ctx, store.p(&names.wo), store.p(&names.bo));
    (
        out,
        AttnCache {
            q_in: q_in.clone(),
            kv_in: kv_in.clone(),
            q,
            k,
            v,
            probs,
            ctx,
            causal,
            heads,
        },
    )
}

/// Returns (d_q_in, d_kv_in). For self-attention the caller adds both into
/// the same upstream gradient.
pub fn mha_bwd_into(
    grads: &mut GradStore,
    cache: &AttnCache,
    store: &ParameterStore,
    names: &AttnNames,
    dout: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let d = cache.q.ncols();
    let dh = d / cache.heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let dctx = linear_bwd_into(grads, &cache.ctx, store.p(&names.wo), dout, &names.wo, &names.bo);

    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    for h in 0..cache.heads {
        let p = &cache.probs[h];
        let qh = head_slice(&cache.q, h, dh);
        let kh = head_slice(&cache.k, h, dh);
        let vh = head_slice(&cache.v, h, dh);
        let dctx_h = dctx.slice(s![.., h * dh..(h + 1) * dh]);

        let dp = dctx_h.dot(&vh.t());
        let dvh = p.t().dot(&dctx_h);
        let mut ds = softmax_rows_bwd(p, &dp);
        ds.mapv_inplace(|v| v * scale);
        let dqh = ds.dot(&kh);
        let dkh = ds.t().dot(&qh);

        dq.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dqh);
        dk.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dkh);
        dv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dvh);
    }

    let dq_in = linear_bwd_into(grads, &cache.q_in, store.p(&names.wq), &dq, &names.wq, &names.bq);
    let mut dkv_in = linear_bwd_into(grads, &cache.kv_in, store.p(&names.wk), &dk, &names.wk, &names.bk);
    dkv_in += &linear_bwd_into(grads, &cache.kv_in, store.p(&names.wv), &dv, &names.wv, &names.bv);
    (dq_in, dkv_in)
}
