// SPDX-License-Identifier: MIT OR Apache-2.0

//! Choosing the fusion penalty by held-out likelihood, and picking among
//! repeated full-data fits.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::admm::{approximate_log_likelihood, draw_prior_samples, fit, AdmmConfig, FitResult};
use crate::decoder::{adjacency_target, DecoderParameters};
use crate::error::{Error, Result};
use crate::graph::GraphSequence;
use crate::localization::{consecutive_distances, mean, sample_sd};
use crate::seeding;

/// Default penalty grid when localizing with the data-driven threshold.
pub const DATA_DRIVEN_GRID: [f64; 4] = [10.0, 20.0, 50.0, 100.0];
/// Default penalty grid when localizing with the Gamma threshold.
pub const GAMMA_GRID: [f64; 4] = [5.0, 10.0, 20.0, 50.0];

/// Odd time points (1, 3, 5, ...) for training, even ones for testing.
pub fn split_odd_even(graphs: &GraphSequence) -> Result<(GraphSequence, GraphSequence)> {
    let t_len = graphs.len();
    if t_len < 4 {
        return Err(Error::InvalidConfig(format!(
            "need T >= 4 time points to split, got {t_len}"
        )));
    }
    let train: Vec<usize> = (0..t_len).step_by(2).collect();
    let test: Vec<usize> = (1..t_len).step_by(2).collect();
    Ok((graphs.subsequence(&train), graphs.subsequence(&test)))
}

/// Estimated log-likelihood of `test` with test graph `j` scored under the
/// prior `N(mu_train[j], I)`, using `samples` prior draws per graph.
pub fn test_log_likelihood(
    decoder: &DecoderParameters,
    mu_train: ArrayView2<f64>,
    test: &GraphSequence,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if test.len() > mu_train.nrows() {
        return Err(Error::DimensionMismatch {
            expected: mu_train.nrows(),
            got: test.len(),
        });
    }
    if samples == 0 {
        return Err(Error::InvalidConfig("need at least one prior sample".into()));
    }
    let mu = mu_train.slice(ndarray::s![..test.len(), ..]);
    let prior = draw_prior_samples(mu, samples, seed);
    let targets: Vec<Array2<f64>> = test.graphs().iter().map(adjacency_target).collect();
    approximate_log_likelihood(decoder, &targets, &prior)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LambdaScore {
    pub lambda: f64,
    /// `None` when the fit for this penalty failed.
    pub test_log_lik: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// One entry per distinct grid value, in increasing order of `lambda`.
    pub scores: Vec<LambdaScore>,
}

impl LambdaSelection {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("lambda report", e);
        writeln!(out, "lambda,test_log_lik,selected").map_err(io)?;
        for s in &self.scores {
            let ll = s.test_log_lik.map_or("nan".to_string(), |v| format!("{v:.6}"));
            let selected = u8::from(s.lambda == self.lambda);
            writeln!(out, "{},{ll},{selected}", s.lambda).map_err(io)?;
        }
        Ok(())
    }
}

/// Fits the training half for every penalty in `grid` and keeps the one with
/// the highest test log-likelihood. Ties go to the larger penalty.
///
/// All fits share `config.seed`; scoring draws come from a stream derived
/// from it.
pub fn select_lambda(graphs: &GraphSequence, grid: &[f64], config: &AdmmConfig) -> Result<LambdaSelection> {
    let mut grid: Vec<f64> = grid.to_vec();
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty lambda grid".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {bad}")));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (train, test) = split_odd_even(graphs)?;
    let score_seed = seeding::derive_seed(config.seed, &[u64::MAX - 1]);

    let scores: Vec<LambdaScore> = grid
        .par_iter()
        .map(|&lambda| {
            let cfg = AdmmConfig { lambda, ..config.clone() };
            let ll = fit(&train, &cfg).and_then(|r| {
                test_log_likelihood(&r.decoder, r.mu.view(), &test, config.langevin.chains, score_seed)
            });
            match ll {
                Ok(v) => LambdaScore { lambda, test_log_lik: Some(v) },
                Err(e) => {
                    log::warn!("lambda {lambda}: fit failed, skipping: {e}");
                    LambdaScore { lambda, test_log_lik: None }
                }
            }
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    for s in &scores {
        if let Some(ll) = s.test_log_lik {
            if best.map_or(true, |(_, b)| ll >= b) {
                best = Some((s.lambda, ll));
            }
        }
    }
    let (lambda, _) = best.ok_or_else(|| Error::InvalidConfig("every lambda fit failed".into()))?;
    Ok(LambdaSelection { lambda, scores })
}

/// `mean / sd` of the consecutive-difference norms. A zero sd gives `+inf`
/// when the mean is positive and `0` when it is zero.
pub fn coefficient_of_variation(deltas: &[f64]) -> f64 {
    let m = mean(deltas);
    let sd = if deltas.len() < 2 { 0.0 } else { sample_sd(deltas) };
    if sd > 0.0 {
        m / sd
    } else if m > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Index of the candidate with the largest coefficient of variation of its
/// consecutive differences; the first one wins ties.
pub fn pick_by_cov(candidates: &[ArrayView2<f64>]) -> Option<(usize, Vec<f64>)> {
    let covs: Vec<f64> = candidates
        .iter()
        .map(|mu| coefficient_of_variation(&consecutive_distances(*mu)))
        .collect();
    let mut best = None;
    for (i, &c) in covs.iter().enumerate() {
        if best.map_or(true, |b: usize| c > covs[b]) {
            best = Some(i);
        }
    }
    best.map(|b| (b, covs))
}

pub struct RefitPick {
    pub chosen: usize,
    pub cov: Vec<f64>,
    pub fits: Vec<FitResult>,
}

impl RefitPick {
    pub fn best(&self) -> &FitResult {
        &self.fits[self.chosen]
    }
}

/// Fits the full sequence `repeats` times and keeps the fit whose `mu` has
/// the largest coefficient of variation. Repeat 0 uses `config.seed`, repeat
/// `r > 0` a seed derived from it.
pub fn refit_and_pick(graphs: &GraphSequence, config: &AdmmConfig, repeats: usize) -> Result<RefitPick> {
    if repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be >= 1".into()));
    }
    let fits: Vec<FitResult> = (0..repeats)
        .map(|r| {
            let seed = if r == 0 {
                config.seed
            } else {
                seeding::derive_seed(config.seed, &[r as u64])
            };
            fit(graphs, &AdmmConfig { seed, ..config.clone() }).map_err(|e| e.context(format!("refit {r}")))
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = fits.iter().map(|f| f.mu.view()).collect();
    let (chosen, cov) = pick_by_cov(&views).expect("repeats >= 1");
    Ok(RefitPick { chosen, cov, fits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn seq(t_len: usize) -> GraphSequence {
        let graphs = (0..t_len)
            .map(|t| {
                let mut a = Array2::<u8>::zeros((3, 3));
                a[[0, 1]] = (t % 2) as u8;
                a
            })
            .collect();
        GraphSequence::new(true, 3, graphs).unwrap()
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split_odd_even(&seq(6)).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 3));
        assert!(tr.graphs().iter().all(|g| g[[0, 1]] == 0));
        assert!(te.graphs().iter().all(|g| g[[0, 1]] == 1));
        let (tr, te) = split_odd_even(&seq(5)).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 2));
        assert!(split_odd_even(&seq(3)).is_err());
    }

    #[test]
    fn cov_rule() {
        assert_eq!(coefficient_of_variation(&[1.0, 1.0, 1.0]), f64::INFINITY);
        assert_eq!(coefficient_of_variation(&[0.0, 0.0]), 0.0);
        let c = coefficient_of_variation(&[1.0, 5.0, 1.0]);
        assert!((c - (7.0 / 3.0) / (4.0 / 3f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn pick_prefers_flat_steps_then_first() {
        let a = array![[0.0], [1.0], [2.0], [3.0]];
        let b = array![[0.0], [1.0], [6.0], [7.0]];
        let (i, covs) = pick_by_cov(&[b.view(), a.view()]).unwrap();
        assert_eq!(i, 1);
        assert_eq!(covs[1], f64::INFINITY);
        let (i, _) = pick_by_cov(&[a.view(), a.view()]).unwrap();
        assert_eq!(i, 0);
        assert!(pick_by_cov(&[]).is_none());
    }

    #[test]
    fn report_marks_selection() {
        let sel = LambdaSelection {
            lambda: 20.0,
            scores: vec![
                LambdaScore { lambda: 10.0, test_log_lik: Some(-3.5) },
                LambdaScore { lambda: 20.0, test_log_lik: Some(-1.25) },
                LambdaScore { lambda: 50.0, test_log_lik: None },
            ],
        };
        let mut out = Vec::new();
        sel.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "lambda,test_log_lik,selected\n10,-3.500000,0\n20,-1.250000,1\n50,nan,0\n"
        );
    }
}
