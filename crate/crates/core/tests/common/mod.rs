// SPDX-License-Identifier: MIT OR Apache-2.0

//! Reference implementations used as test oracles. They are written
//! independently of the library code paths they check: plain loops, no
//! shared helpers.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use netcpd::decoder::{DecoderParameters, PROB_CLAMP};
use netcpd::graph::Adjacency;
use rand::Rng;

/// Gauss-Hermite nodes and weights for `int f(x) exp(-x^2) dx` by the
/// Golub-Welsch eigenvalue method.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Latent factors `(U, V)` computed with explicit loops.
pub fn naive_factors(p: &DecoderParameters, z: ArrayView1<f64>) -> (Array2<f64>, Array2<f64>) {
    let s = p.shape();
    let mut h = vec![0.0; s.hidden];
    for a in 0..s.hidden {
        let mut acc = p.b1[a];
        for b in 0..s.latent_dim {
            acc += p.w1[[a, b]] * z[b];
        }
        h[a] = acc.tanh();
    }
    let head = |w: &Array2<f64>, bias: &Array1<f64>| {
        let mut out = Array2::zeros((s.nodes, s.rank));
        for i in 0..s.nodes {
            for c in 0..s.rank {
                let row = i * s.rank + c;
                let mut acc = bias[row];
                for a in 0..s.hidden {
                    acc += w[[row, a]] * h[a];
                }
                out[[i, c]] = acc;
            }
        }
        out
    };
    let u = head(&p.wu, &p.bu);
    let v = match (&p.wv, &p.bv) {
        (Some(w), Some(b)) => head(w, b),
        _ => u.clone(),
    };
    (u, v)
}

/// Edge probabilities `sigmoid(U V^T)` with a zero diagonal.
pub fn naive_probabilities(p: &DecoderParameters, z: ArrayView1<f64>) -> Array2<f64> {
    let (u, v) = naive_factors(p, z);
    let n = u.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            sigmoid((0..u.ncols()).map(|c| u[[i, c]] * v[[j, c]]).sum())
        }
    })
}

/// Clamped Bernoulli log-likelihood over ordered pairs (directed) or
/// unordered pairs (undirected), with a real-valued target.
pub fn naive_log_likelihood_target(p: &DecoderParameters, z: ArrayView1<f64>, y: ArrayView2<f64>) -> f64 {
    let r = naive_probabilities(p, z);
    let n = r.nrows();
    let directed = p.shape().directed;
    let mut ll = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j || (!directed && j < i) {
                continue;
            }
            let q = r[[i, j]].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            ll += y[[i, j]] * q.ln() + (1.0 - y[[i, j]]) * (1.0 - q).ln();
        }
    }
    ll
}

pub fn naive_log_likelihood(p: &DecoderParameters, z: ArrayView1<f64>, y: &Adjacency) -> f64 {
    naive_log_likelihood_target(p, z, y.mapv(f64::from).view())
}

/// `log int P(y | z) N(z; mu, 1) dz` for a one-dimensional latent space by
/// Gauss-Hermite quadrature.
pub fn quadrature_log_marginal(p: &DecoderParameters, mu: f64, y: &Adjacency, nodes: usize) -> f64 {
    let (x, w) = gauss_hermite(nodes);
    let terms: Vec<f64> = x
        .iter()
        .zip(&w)
        .map(|(xi, wi)| {
            let z = Array1::from(vec![mu + std::f64::consts::SQRT_2 * xi]);
            wi.ln() - 0.5 * std::f64::consts::PI.ln() + naive_log_likelihood(p, z.view(), y)
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `kappa/2 ||M - nu||_F^2 + lambda sum_t ||nu_{t+1} - nu_t||_2`.
pub fn gfl_primal_objective(m: ArrayView2<f64>, nu: ArrayView2<f64>, lambda: f64, kappa: f64) -> f64 {
    let mut fit = 0.0;
    for (a, b) in m.iter().zip(nu.iter()) {
        fit += (a - b) * (a - b);
    }
    let mut tv = 0.0;
    for t in 1..nu.nrows() {
        let mut s = 0.0;
        for j in 0..nu.ncols() {
            let d = nu[[t, j]] - nu[[t - 1, j]];
            s += d * d;
        }
        tv += s.sqrt();
    }
    0.5 * kappa * fit + lambda * tv
}

/// Solves the group fused lasso through its dual,
/// `min_{||u_t|| <= lambda} 1/(2 kappa) ||D^T U||^2 - <U, D M>`,
/// by projected gradient descent; returns `nu = M - D^T U / kappa`.
pub fn gfl_dual_oracle(m: ArrayView2<f64>, lambda: f64, kappa: f64, iterations: usize) -> Array2<f64> {
    let (t_len, d) = m.dim();
    let mut u = Array2::<f64>::zeros((t_len - 1, d));
    let step = kappa / 4.0;
    let primal = |u: &Array2<f64>| {
        let mut nu = m.to_owned();
        for t in 0..t_len - 1 {
            for j in 0..d {
                // (D^T U)_t = u_{t-1} - u_t with D nu = nu_{t+1} - nu_t
                nu[[t, j]] += u[[t, j]] / kappa;
                nu[[t + 1, j]] -= u[[t, j]] / kappa;
            }
        }
        nu
    };
    for _ in 0..iterations {
        let nu = primal(&u);
        for t in 0..t_len - 1 {
            let mut norm = 0.0;
            for j in 0..d {
                // gradient of the dual objective is -(D nu)
                u[[t, j]] += step * (nu[[t + 1, j]] - nu[[t, j]]);
                norm += u[[t, j]] * u[[t, j]];
            }
            let norm = norm.sqrt();
            if norm > lambda {
                for j in 0..d {
                    u[[t, j]] *= lambda / norm;
                }
            }
        }
    }
    primal(&u)
}

/// `max_{c in of} min_{h in by} |h - c|` by brute force, with the same
/// conventions for empty sets as the library.
pub fn naive_hausdorff(by: &[usize], of: &[usize]) -> f64 {
    if by.is_empty() {
        return f64::INFINITY;
    }
    let mut worst = f64::NEG_INFINITY;
    for &c in of {
        let mut best = usize::MAX;
        for &h in by {
            let d = if h > c { h - c } else { c - h };
            best = best.min(d);
        }
        worst = worst.max(best as f64);
    }
    worst
}

/// Segment label of every time point `1..=T` for change points `cps`.
fn labels(t_len: usize, cps: &[usize]) -> Vec<usize> {
    (1..=t_len).map(|t| cps.iter().filter(|&&c| c <= t).count()).collect()
}

/// Coverage by counting memberships time point by time point.
pub fn naive_coverage(t_len: usize, truth: &[usize], detected: &[usize]) -> f64 {
    let lt = labels(t_len, truth);
    let ld = labels(t_len, detected);
    let mut total = 0.0;
    for a in 0..=truth.len() {
        let size = lt.iter().filter(|&&l| l == a).count();
        let mut best: f64 = 0.0;
        for b in 0..=detected.len() {
            let inter = (0..t_len).filter(|&t| lt[t] == a && ld[t] == b).count();
            let union = (0..t_len).filter(|&t| lt[t] == a || ld[t] == b).count();
            best = best.max(inter as f64 / union as f64);
        }
        total += size as f64 * best;
    }
    total / t_len as f64
}

/// Random sorted change points in `2..=T` (no duplicates).
pub fn random_change_points<R: Rng>(rng: &mut R, t_len: usize, max_count: usize) -> Vec<usize> {
    let count = rng.gen_range(0..=max_count.min(t_len - 1));
    let mut pts: Vec<usize> = Vec::new();
    while pts.len() < count {
        let c = rng.gen_range(2..=t_len);
        if !pts.contains(&c) {
            pts.push(c);
        }
    }
    pts.sort_unstable();
    pts
}

/// Random binary adjacency without self-loops; symmetric when undirected.
pub fn random_adjacency<R: Rng>(rng: &mut R, n: usize, density: f64, directed: bool) -> Adjacency {
    let mut y = Adjacency::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j || (!directed && j < i) {
                continue;
            }
            let e = u8::from(rng.gen_bool(density));
            y[[i, j]] = e;
            if !directed {
                y[[j, i]] = e;
            }
        }
    }
    y
}

/// Decoder with every weight and bias drawn uniformly from `[-scale, scale]`.
pub fn random_decoder<R: Rng>(rng: &mut R, shape: netcpd::decoder::DecoderShape, scale: f64) -> DecoderParameters {
    let mut p = DecoderParameters::zeros(shape).unwrap();
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.gen_range(-scale..=scale);
        }
    }
    p
}
