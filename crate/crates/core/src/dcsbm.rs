// SPDX-License-Identifier: MIT OR Apache-2.0

//! Degree-corrected stochastic block model: pseudo-likelihood EM fit and
//! held-out scoring of a segmentation.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ChangePointSet, GraphSequence, Partition};
use crate::seeding;

/// Floor applied inside logarithms of fitted probabilities.
const LOG_FLOOR: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct DcsbmModel {
    pub k: usize,
    /// 0-based community of each node.
    pub labels: Vec<usize>,
    /// `B[k, l] = sum_ij A_ij 1(e_i = k, e_j = l)` on the fitted matrix.
    pub block_sums: Array2<f64>,
    pub theta: Array1<f64>,
    pub pi: Array1<f64>,
    /// Pseudo-log-likelihood after each EM step, one trace per label round.
    pub em_traces: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct DcsbmOptions {
    pub max_rounds: usize,
    pub em_steps: usize,
    pub seed: u64,
}

impl Default for DcsbmOptions {
    fn default() -> Self {
        DcsbmOptions {
            max_rounds: 20,
            em_steps: 50,
            seed: 0,
        }
    }
}

/// `(y + y^T) / 2` for directed input, `y` otherwise, as reals.
pub fn symmetrized(y: ArrayView2<u8>, directed: bool) -> Array2<f64> {
    let a = y.mapv(f64::from);
    if directed {
        (&a + &a.t()) * 0.5
    } else {
        a
    }
}

fn check_square(a: ArrayView2<f64>) -> Result<usize> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidConfig(format!(
            "DCSBM needs a non-empty square matrix, got {:?}",
            a.dim()
        )));
    }
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidConfig("DCSBM weights must be finite and >= 0".into()));
    }
    Ok(n)
}

/// `b[i, k] = sum_j A_ij 1(e_j = k)`.
pub fn node_block_sums(a: ArrayView2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let n = a.nrows();
    let mut b = Array2::zeros((n, k));
    for i in 0..n {
        for j in 0..n {
            b[[i, labels[j]]] += a[[i, j]];
        }
    }
    b
}

/// `B[k, l] = sum_ij A_ij 1(e_i = k, e_j = l)`.
pub fn block_sums(a: ArrayView2<f64>, labels: &[usize], k: usize) -> Array2<f64> {
    let n = a.nrows();
    let mut bs = Array2::zeros((k, k));
    for i in 0..n {
        for j in 0..n {
            bs[[labels[i], labels[j]]] += a[[i, j]];
        }
    }
    bs
}

/// `theta_i = d_i / sum_l B[e_i, l]`, zero for empty block totals.
pub fn degree_parameters(a: ArrayView2<f64>, labels: &[usize], bs: &Array2<f64>) -> Array1<f64> {
    let totals: Vec<f64> = bs.outer_iter().map(|r| r.sum()).collect();
    Array1::from_shape_fn(a.nrows(), |i| {
        let t = totals[labels[i]];
        if t > 0.0 {
            a.row(i).sum() / t
        } else {
            0.0
        }
    })
}

/// DCSBM log-likelihood of `a` under `labels`, with `B` and `theta`
/// recomputed from `a`:
///
/// `sum_ij A_ij log(theta_i theta_j B[e_i,e_j])
///  - (sum_kl B_kl + sum_k B_kk sum_{i in k} theta_i^2) / 2
///  + sum_k n_k log(n_k / n)`.
pub fn dcsbm_log_likelihood(labels: &[usize], k: usize, a: ArrayView2<f64>) -> Result<f64> {
    let n = check_square(a)?;
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::IndexOutOfRange { index: bad, len: k });
    }
    let bs = block_sums(a, labels, k);
    let theta = degree_parameters(a, labels, &bs);
    let mut fit = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = a[[i, j]];
            if w > 0.0 {
                let rate = theta[i] * theta[j] * bs[[labels[i], labels[j]]];
                fit += w * rate.max(LOG_FLOOR).ln();
            }
        }
    }
    let mut theta_sq = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for i in 0..n {
        theta_sq[labels[i]] += theta[i] * theta[i];
        counts[labels[i]] += 1;
    }
    let diag: f64 = (0..k).map(|c| bs[[c, c]] * theta_sq[c]).sum();
    let sizes: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64 * (c as f64 / n as f64).ln())
        .sum();
    Ok(fit - 0.5 * (bs.sum() + diag) + sizes)
}

/// `-2 ll + (K^2 + n) log(n (n - 1) / 2)`.
pub fn bic(log_lik: f64, k: usize, n: usize) -> f64 {
    let dyads = (n * (n - 1) / 2).max(1) as f64;
    -2.0 * log_lik + ((k * k + n) as f64) * dyads.ln()
}

/// Pseudo-likelihood EM. Starts from `init` or from spectral labels, then
/// alternates EM on `(pi, theta)` with fixed block sums and hard relabelling
/// until the labels stop changing.
pub fn fit_dcsbm(a: ArrayView2<f64>, k: usize, init: Option<&[usize]>, opts: &DcsbmOptions) -> Result<DcsbmModel> {
    let n = check_square(a)?;
    if k < 2 || k > n {
        return Err(Error::InvalidConfig(format!("need 2 <= K <= n, got K={k}, n={n}")));
    }
    let mut labels = match init {
        Some(l) if l.len() == n && l.iter().all(|&x| x < k) => l.to_vec(),
        Some(l) => {
            return Err(Error::InvalidConfig(format!(
                "initial labels must have length {n} with values < {k}, got length {}",
                l.len()
            )))
        }
        None => spectral_labels(a, k, opts.seed),
    };
    reseed_empty(&mut labels, k, None);
    let degrees: Vec<f64> = a.outer_iter().map(|r| r.sum()).collect();
    let mut em_traces = Vec::new();
    let mut pi = Array1::from_elem(k, 1.0 / k as f64);
    for _ in 0..opts.max_rounds.max(1) {
        let b = node_block_sums(a, &labels, k);
        // hard-label start for (pi, theta)
        let mut post = Array2::zeros((n, k));
        for (i, &l) in labels.iter().enumerate() {
            post[[i, l]] = 1.0;
        }
        let (mut p, mut th) = m_step(&post, &b, &degrees);
        let mut trace = Vec::with_capacity(opts.em_steps);
        for _ in 0..opts.em_steps.max(1) {
            let (new_post, ll) = e_step(&p, &th, &b);
            trace.push(ll);
            post = new_post;
            (p, th) = m_step(&post, &b, &degrees);
            if trace.len() >= 2 && (trace[trace.len() - 1] - trace[trace.len() - 2]).abs() <= 1e-10 * ll.abs().max(1.0) {
                break;
            }
        }
        em_traces.push(trace);
        pi = p;
        let mut next: Vec<usize> = post
            .outer_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (l, &v)| if v > best.1 { (l, v) } else { best })
                    .0
            })
            .collect();
        reseed_empty(&mut next, k, Some(&post));
        if next == labels {
            break;
        }
        labels = next;
    }
    let bs = block_sums(a, &labels, k);
    let theta = degree_parameters(a, &labels, &bs);
    Ok(DcsbmModel {
        k,
        labels,
        block_sums: bs,
        theta,
        pi,
        em_traces,
    })
}

/// `pi_l = mean_i post_il`, `theta_lk = sum_i post_il b_ik / sum_i post_il d_i`.
fn m_step(post: &Array2<f64>, b: &Array2<f64>, degrees: &[f64]) -> (Array1<f64>, Array2<f64>) {
    let (n, k) = post.dim();
    let pi = post.sum_axis(ndarray::Axis(0)) / n as f64;
    let mut theta = Array2::zeros((k, k));
    for l in 0..k {
        let denom: f64 = (0..n).map(|i| post[[i, l]] * degrees[i]).sum();
        for c in 0..k {
            let num: f64 = (0..n).map(|i| post[[i, l]] * b[[i, c]]).sum();
            theta[[l, c]] = if denom > 0.0 { num / denom } else { 0.0 };
        }
    }
    (pi, theta)
}

/// Posterior responsibilities and the pseudo-log-likelihood
/// `sum_i log sum_l pi_l prod_k theta_lk^{b_ik}` at the given parameters.
fn e_step(pi: &Array1<f64>, theta: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, f64) {
    let (n, k) = b.dim();
    let mut post = Array2::zeros((n, k));
    let mut total = 0.0;
    for i in 0..n {
        let logs: Vec<f64> = (0..k)
            .map(|l| {
                let mut s = pi[l].max(LOG_FLOOR).ln();
                for c in 0..k {
                    if b[[i, c]] > 0.0 {
                        s += b[[i, c]] * theta[[l, c]].max(LOG_FLOOR).ln();
                    }
                }
                s
            })
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|v| (v - m).exp()).sum();
        total += m + z.ln();
        for l in 0..k {
            post[[i, l]] = (logs[l] - m).exp() / z;
        }
    }
    (post, total)
}

/// Moves one node from the largest block into each empty block, choosing
/// the member with the weakest attachment to its current block.
fn reseed_empty(labels: &mut [usize], k: usize, post: Option<&Array2<f64>>) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).expect("k >= 1");
        if counts[largest] < 2 {
            return;
        }
        let member = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == largest)
            .map(|(i, _)| i)
            .min_by(|&x, &y| {
                let px = post.map_or(0.0, |p| p[[x, largest]]);
                let py = post.map_or(0.0, |p| p[[y, largest]]);
                px.total_cmp(&py).then(y.cmp(&x))
            })
            .expect("non-empty block");
        labels[member] = empty;
    }
}

/// Rows of the leading `k` eigenvectors of `D^{-1/2} A D^{-1/2}`,
/// normalised and clustered by k-means; random labels if that degenerates.
pub fn spectral_labels(a: ArrayView2<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = a.nrows();
    let deg: Vec<f64> = a.outer_iter().map(|r| r.sum()).collect();
    let scale: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]) * scale[i] * scale[j]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
    let mut rows = Array2::zeros((n, k));
    for (c, &idx) in order.iter().take(k).enumerate() {
        for i in 0..n {
            rows[[i, c]] = eig.eigenvectors[(i, idx)];
        }
    }
    for mut r in rows.outer_iter_mut() {
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            r /= norm;
        }
    }
    let mut rng = seeding::stream(seed, &[k as u64]);
    let labels = kmeans(&rows, k, &mut rng);
    let distinct = {
        let mut seen = vec![false; k];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().all(|&s| s)
    };
    if distinct {
        labels
    } else {
        let mut random: Vec<usize> = (0..n).map(|i| i % k).collect();
        random.shuffle(&mut rng);
        random
    }
}

/// Lloyd's algorithm with k-means++ seeding, best of a few restarts.
fn kmeans<R: Rng>(x: &Array2<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = x.nrows();
    let dist = |i: usize, c: &Array1<f64>| -> f64 { x.row(i).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..5 {
        let mut centers: Vec<Array1<f64>> = vec![x.row(rng.gen_range(0..n)).to_owned()];
        while centers.len() < k {
            let d2: Vec<f64> = (0..n)
                .map(|i| centers.iter().map(|c| dist(i, c)).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d2.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut idx = n - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if u < d {
                        idx = i;
                        break;
                    }
                    u -= d;
                }
                idx
            } else {
                rng.gen_range(0..n)
            };
            centers.push(x.row(pick).to_owned());
        }
        let mut labels = vec![0; n];
        for _ in 0..100 {
            let next: Vec<usize> = (0..n)
                .map(|i| {
                    (0..k)
                        .min_by(|&a, &b| dist(i, &centers[a]).total_cmp(&dist(i, &centers[b])))
                        .expect("k >= 1")
                })
                .collect();
            let changed = next != labels;
            labels = next;
            for (c, center) in centers.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if !members.is_empty() {
                    let mut mean = Array1::zeros(x.ncols());
                    for &i in &members {
                        mean += &x.row(i);
                    }
                    *center = mean / members.len() as f64;
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = (0..n).map(|i| dist(i, &centers[labels[i]])).sum();
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

/// Per-interval outcome of [`interval_holdout_score`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalScore {
    pub start: usize,
    pub end: usize,
    pub k: usize,
    pub held_out: Vec<usize>,
    pub log_lik: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HoldoutScore {
    pub gap: usize,
    pub total: f64,
    pub intervals: Vec<IntervalScore>,
}

/// Removes the graphs at multiples of `gap`, fits a DCSBM to the average of
/// the remaining graphs in each detected interval (K picked by lowest BIC)
/// and sums the log-likelihood of the removed graphs under the fitted
/// labels.
pub fn interval_holdout_score(
    graphs: &GraphSequence,
    change_points: &ChangePointSet,
    gap: usize,
    k_grid: &[usize],
    opts: &DcsbmOptions,
) -> Result<HoldoutScore> {
    let t_len = graphs.len();
    if gap < 2 || gap > t_len {
        return Err(Error::InvalidConfig(format!("holdout gap must be in 2..={t_len}, got {gap}")));
    }
    if k_grid.is_empty() {
        return Err(Error::InvalidConfig("empty K grid".into()));
    }
    let partition = Partition::from_change_points(t_len, change_points)?;
    let n = graphs.n();
    let mut intervals = Vec::new();
    let mut total = 0.0;
    for r in partition.intervals() {
        let (train, test): (Vec<usize>, Vec<usize>) = r.clone().partition(|t| t % gap != 0);
        if train.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "interval {}..={} has no graphs left after removing multiples of {gap}",
                r.start(),
                r.end()
            )));
        }
        let mut avg = Array2::<f64>::zeros((n, n));
        for &t in &train {
            avg += &symmetrized(graphs.at(t)?.view(), graphs.directed());
        }
        avg /= train.len() as f64;
        let mut best: Option<(f64, DcsbmModel)> = None;
        for &k in k_grid.iter().filter(|&&k| k >= 2 && k <= n) {
            let model = fit_dcsbm(avg.view(), k, None, opts)?;
            let score = bic(dcsbm_log_likelihood(&model.labels, k, avg.view())?, k, n);
            if best.as_ref().map_or(true, |(b, _)| score < *b) {
                best = Some((score, model));
            }
        }
        let (_, model) = best.ok_or_else(|| Error::InvalidConfig(format!("no K in {k_grid:?} fits n={n}")))?;
        let mut ll = 0.0;
        for &t in &test {
            let y = symmetrized(graphs.at(t)?.view(), graphs.directed());
            ll += dcsbm_log_likelihood(&model.labels, model.k, y.view())?;
        }
        total += ll;
        intervals.push(IntervalScore {
            start: *r.start(),
            end: *r.end(),
            k: model.k,
            held_out: test,
            log_lik: ll,
        });
    }
    Ok(HoldoutScore { gap, total, intervals })
}

pub fn write_holdout_csv<W: Write>(rows: &[(String, HoldoutScore)], mut out: W) -> Result<()> {
    let io = |e| Error::io("holdout", e);
    writeln!(out, "gap,method,log_lik").map_err(io)?;
    for (method, s) in rows {
        writeln!(out, "{},{},{:.6}", s.gap, method, s.total).map_err(io)?;
    }
    Ok(())
}
