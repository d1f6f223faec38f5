//! Exact O(n^2) t-SNE with per-point bandwidth calibration by binary
//! search (entropy measured in bits, 2^H = perplexity), symmetrised
//! affinities, early exaggeration x12 for the first 250 iterations, and
//! momentum gradient descent (0.5 then 0.8) at learning rate 200.

use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which stream an embedding matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    Fovea,
    Periphery,
}

impl EmbeddingSource {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingSource::Fovea => "fovea",
            EmbeddingSource::Periphery => "periphery",
        }
    }
}

/// [n, d] embedding matrix with per-row labels.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    pub data: Tensor<f64>,
    pub superclass: Vec<u8>,
    pub category: Vec<usize>,
    pub source: EmbeddingSource,
}

impl EmbeddingSet {
    pub fn new(
        data: Tensor<f64>,
        superclass: Vec<u8>,
        category: Vec<usize>,
        source: EmbeddingSource,
    ) -> Result<Self> {
        if data.shape().rank() != 2 {
            return Err(Error::Shape(format!(
                "embeddings must be [n,d], got {}",
                data.shape()
            )));
        }
        let n = data.dims()[0];
        if superclass.len() != n || category.len() != n {
            return Err(Error::Argument(format!(
                "label lists must have length {n}, got {} and {}",
                superclass.len(),
                category.len()
            )));
        }
        if !data.all_finite() {
            return Err(Error::Numeric("embeddings contain non-finite entries".into()));
        }
        Ok(EmbeddingSet {
            data,
            superclass,
            category,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Result of one t-SNE run: 2D coordinates plus KL diagnostics. `flagged`
/// means the KL divergence increased (beyond 1e-6 per step) in more than
/// 1% of post-exaggeration steps.
#[derive(Debug, Clone)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    pub kl_history: Vec<f64>,
    pub kl_violations: usize,
    pub flagged: bool,
    /// max_i |2^H(P_i) - perplexity| over all rows after calibration.
    pub max_calibration_err: f64,
}

const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const LEARNING_RATE: f64 = 200.0;
const MOMENTUM_EARLY: f64 = 0.5;
const MOMENTUM_LATE: f64 = 0.8;
const MOMENTUM_SWITCH: usize = 250;
const P_FLOOR: f64 = 1e-12;
const BETA_SEARCH_CAP: usize = 200;
const KL_STEP_TOLERANCE: f64 = 1e-6;

fn pairwise_sq_dists(x: &Tensor<f64>) -> Vec<f64> {
    let (n, d) = (x.dims()[0], x.dims()[1]);
    let xd = x.data();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let a = &xd[i * d..(i + 1) * d];
            let b = &xd[j * d..(j + 1) * d];
            let mut s = 0.0;
            for (va, vb) in a.iter().zip(b) {
                let diff = va - vb;
                s += diff * diff;
            }
            dist[i * n + j] = s;
            dist[j * n + i] = s;
        }
    }
    dist
}

/// Row-conditional affinities P(j|i) at the given beta, returning the
/// entropy in bits. Identical-distance rows come out uniform.
fn row_affinities(dists: &[f64], n: usize, i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for j in 0..n {
        if j == i {
            out[j] = 0.0;
            continue;
        }
        let p = (-beta * dists[i * n + j]).exp();
        out[j] = p;
        sum += p;
    }
    let mut h_bits = 0.0;
    if sum > 0.0 {
        for (j, v) in out.iter_mut().enumerate() {
            if j == i {
                continue;
            }
            *v /= sum;
            if *v > 0.0 {
                h_bits -= *v * v.log2();
            }
        }
    } else {
        // All kernels underflowed; fall back to uniform.
        let u = 1.0 / (n - 1) as f64;
        for (j, v) in out.iter_mut().enumerate() {
            *v = if j == i { 0.0 } else { u };
        }
        h_bits = ((n - 1) as f64).log2();
    }
    h_bits
}

/// Binary search for the bandwidth giving 2^H = perplexity within
/// 1e-3 * perplexity, capped at a fixed iteration budget (degenerate rows
/// saturate at the cap).
fn calibrate_row(dists: &[f64], n: usize, i: usize, perplexity: f64, out: &mut [f64]) -> f64 {
    let target_h = perplexity.log2();
    let mut beta = 1.0;
    let mut beta_min = f64::NEG_INFINITY;
    let mut beta_max = f64::INFINITY;
    let mut h = row_affinities(dists, n, i, beta, out);
    for _ in 0..BETA_SEARCH_CAP {
        let achieved = h.exp2();
        if (achieved - perplexity).abs() <= 1e-3 * perplexity {
            break;
        }
        if h > target_h {
            // Too spread out: raise beta.
            beta_min = beta;
            beta = if beta_max.is_infinite() { beta * 2.0 } else { (beta + beta_max) / 2.0 };
        } else {
            beta_max = beta;
            beta = if beta_min.is_infinite() { beta / 2.0 } else { (beta + beta_min) / 2.0 };
        }
        h = row_affinities(dists, n, i, beta, out);
    }
    (h.exp2() - perplexity).abs()
}

/// Exact t-SNE to 2 dimensions. Deterministic given the seed.
pub fn tsne_2d(
    embeddings: &EmbeddingSet,
    perplexity: f64,
    iters: usize,
    seed: u64,
) -> Result<TsneResult> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Argument("t-SNE needs at least 2 points".into()));
    }
    if n > 5000 {
        return Err(Error::Argument(format!(
            "exact t-SNE is capped at 5000 points, got {n}"
        )));
    }
    // Perplexity must be at least 5 and, for datasets large enough to allow
    // it, at most (n-1)/3. Small degenerate sets keep the lower bound only.
    let upper = ((n - 1) as f64 / 3.0).max(5.0);
    if !(5.0..=upper).contains(&perplexity) {
        return Err(Error::Argument(format!(
            "perplexity {perplexity} outside [5, {upper}] for n = {n}"
        )));
    }

    let dists = pairwise_sq_dists(&embeddings.data);
    let mut cond = vec![0.0f64; n * n];
    let mut max_calibration_err = 0.0f64;
    {
        let mut row = vec![0.0f64; n];
        for i in 0..n {
            let err = calibrate_row(&dists, n, i, perplexity, &mut row);
            max_calibration_err = max_calibration_err.max(err);
            cond[i * n..(i + 1) * n].copy_from_slice(&row);
        }
    }
    // Symmetrise: p_ij = (p_j|i + p_i|j) / 2n, floored for stability.
    let mut p = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(P_FLOOR);
            }
        }
    }

    let mut rng = SeededRng::new(seed, 0);
    let mut y: Vec<f64> = (0..2 * n).map(|_| rng.normal() * 1e-4).collect();
    let mut velocity = vec![0.0f64; 2 * n];
    let mut q = vec![0.0f64; n * n];
    let mut w = vec![0.0f64; n * n];
    let mut kl_history = Vec::with_capacity(iters);
    let mut kl_violations = 0usize;

    for iter in 0..iters {
        // Student-t similarities in 2D.
        let mut w_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let wij = 1.0 / (1.0 + dx * dx + dy * dy);
                w[i * n + j] = wij;
                w[j * n + i] = wij;
                w_sum += 2.0 * wij;
            }
        }
        for (qv, &wv) in q.iter_mut().zip(w.iter()) {
            *qv = (wv / w_sum).max(P_FLOOR);
        }

        let exagg = if iter < EXAGGERATION_ITERS { EXAGGERATION } else { 1.0 };
        let momentum = if iter < MOMENTUM_SWITCH { MOMENTUM_EARLY } else { MOMENTUM_LATE };
        for i in 0..n {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for j in 0..n {
                if i == j {
                    continue;
                }
                let f = 4.0 * (exagg * p[i * n + j] - q[i * n + j]) * w[i * n + j];
                gx += f * (y[2 * i] - y[2 * j]);
                gy += f * (y[2 * i + 1] - y[2 * j + 1]);
            }
            velocity[2 * i] = momentum * velocity[2 * i] - LEARNING_RATE * gx;
            velocity[2 * i + 1] = momentum * velocity[2 * i + 1] - LEARNING_RATE * gy;
        }
        for (yv, &vv) in y.iter_mut().zip(velocity.iter()) {
            *yv += vv;
        }
        // Centre the embedding; KL is translation invariant.
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            cx += y[2 * i];
            cy += y[2 * i + 1];
        }
        cx /= n as f64;
        cy /= n as f64;
        for i in 0..n {
            y[2 * i] -= cx;
            y[2 * i + 1] -= cy;
        }

        // KL of the true (unexaggerated) objective.
        let mut kl = 0.0;
        for idx in 0..n * n {
            let pv = p[idx];
            if pv > P_FLOOR {
                kl += pv * (pv / q[idx]).ln();
            }
        }
        if !kl.is_finite() {
            return Err(Error::Numeric(format!("KL divergence diverged at iteration {iter}")));
        }
        if iter > EXAGGERATION_ITERS {
            if let Some(&prev) = kl_history.last() {
                if kl > prev + KL_STEP_TOLERANCE {
                    kl_violations += 1;
                }
            }
        }
        kl_history.push(kl);
    }

    let post_steps = iters.saturating_sub(EXAGGERATION_ITERS + 1).max(1);
    let flagged = kl_violations as f64 > 0.01 * post_steps as f64;
    Ok(TsneResult {
        coords: (0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect(),
        kl_history,
        kl_violations,
        flagged,
        max_calibration_err,
    })
}

/// Fraction of points whose nearest per-label centroid (computed from the
/// true labels) matches their own label; the cluster-recovery score used on
/// 2D embeddings.
pub fn nearest_centroid_accuracy(coords: &[[f64; 2]], labels: &[u8]) -> Result<f64> {
    if coords.len() != labels.len() || coords.is_empty() {
        return Err(Error::Argument("coords and labels must align and be non-empty".into()));
    }
    let k = *labels.iter().max().unwrap() as usize + 1;
    let mut centroid = vec![[0.0f64; 2]; k];
    let mut count = vec![0usize; k];
    for (c, &l) in coords.iter().zip(labels) {
        centroid[l as usize][0] += c[0];
        centroid[l as usize][1] += c[1];
        count[l as usize] += 1;
    }
    for (c, &n) in centroid.iter_mut().zip(&count) {
        if n > 0 {
            c[0] /= n as f64;
            c[1] /= n as f64;
        }
    }
    let mut hits = 0usize;
    for (c, &l) in coords.iter().zip(labels) {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (ci, cc) in centroid.iter().enumerate() {
            if count[ci] == 0 {
                continue;
            }
            let d = (c[0] - cc[0]).powi(2) + (c[1] - cc[1]).powi(2);
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        hits += usize::from(best == l as usize);
    }
    Ok(hits as f64 / coords.len() as f64)
}
