//! Seeded k-means with k-means++ initialization and Lloyd iterations.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squares after each assignment pass.
    pub objective_trace: Vec<f64>,
}

/// Frame-level cluster labels for a set of utterances plus the centroid
/// matrix they were assigned against.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    pub centroids: Array2<f64>,
    /// One label vector per utterance, frame-aligned.
    pub labels: Vec<Vec<usize>>,
}

fn dist2(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

fn count_distinct(frames: &Array2<f64>) -> usize {
    let mut rows: Vec<Vec<u64>> = frames
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    rows.sort();
    rows.dedup();
    rows.len()
}

/// Cluster `frames` (n x d) into k groups. Deterministic for a fixed seed;
/// the objective is non-increasing across Lloyd iterations; fewer than k
/// distinct frames is an error.
pub fn kmeans(frames: &Array2<f64>, k: usize, iters: usize, seed: u64) -> Result<KmeansResult> {
    let n = frames.nrows();
    if k == 0 {
        return Err(Error::Validation("k must be positive".into()));
    }
    if count_distinct(frames) < k {
        return Err(Error::Validation(format!(
            "need at least {k} distinct frames, found fewer"
        )));
    }
    let d = frames.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids = Array2::zeros((k, d));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&frames.row(first));
    let mut min_d2: Vec<f64> = (0..n)
        .map(|i| dist2(frames.row(i), centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let chosen = if total <= 0.0 {
            // All mass collapsed; fall back to uniform choice.
            rng.gen_range(0..n)
        } else {
            let x: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in min_d2.iter().enumerate() {
                acc += w;
                if x < acc {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centroids.row_mut(c).assign(&frames.row(chosen));
        for i in 0..n {
            let nd = dist2(frames.row(i), centroids.row(c));
            if nd < min_d2[i] {
                min_d2[i] = nd;
            }
        }
    }

    let mut labels = vec![0usize; n];
    let mut objective_trace = Vec::new();
    for _ in 0..iters.max(1) {
        // Assignment; ties break toward the lowest centroid index.
        let mut objective = 0.0;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = dist2(frames.row(i), centroids.row(c));
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            labels[i] = best;
            objective += best_d;
        }
        let converged = objective_trace.last().map(|&prev| objective >= prev).unwrap_or(false)
            && objective_trace.last() == Some(&objective);
        objective_trace.push(objective);
        if converged {
            break;
        }
        // Update; empty clusters keep their previous centroid.
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            let mut row = sums.row_mut(c);
            row += &frames.row(i);
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let mut row = centroids.row_mut(c);
                for (dst, src) in row.iter_mut().zip(sums.row(c).iter()) {
                    *dst = src * inv;
                }
            }
        }
    }
    Ok(KmeansResult {
        centroids,
        labels,
        objective_trace,
    })
}

/// Label each frame with its nearest centroid.
pub fn assign_nearest(centroids: &Array2<f64>, frames: &Array2<f64>) -> Vec<usize> {
    (0..frames.nrows())
        .map(|i| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..centroids.nrows() {
                let dd = dist2(frames.row(i), centroids.row(c));
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            best
        })
        .collect()
}
