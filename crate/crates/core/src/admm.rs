// SPDX-License-Identifier: MIT OR Apache-2.0

//! Latent space group fused lasso fitted by ADMM.
//!
//! Each iteration: Langevin posterior samples and the closed-form `mu` update
//! per time point, `B` Adam steps on the decoder, `D` block coordinate sweeps
//! for `(gamma, beta)`, the scaled dual update and penalty adaptation.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamState};
use crate::decoder::{adjacency_target, DecoderParameters, DecoderShape, Grads};
use crate::error::{Error, Result};
use crate::gfl::{self, GflProblem, GflSolution};
use crate::graph::GraphSequence;
use crate::langevin::{self, LangevinConfig};
use crate::seeding;

/// Sizes of the decoder network built by [`fit`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderSettings {
    pub latent_dim: usize,
    pub hidden: usize,
    pub rank: usize,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        DecoderSettings {
            latent_dim: 10,
            hidden: 64,
            rank: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    pub lambda: f64,
    pub kappa0: f64,
    /// Outer iterations `A`.
    pub iterations: usize,
    /// Adam steps per iteration `B`.
    pub decoder_steps: usize,
    /// Block coordinate sweeps per iteration `D`.
    pub gfl_sweeps: usize,
    pub gfl_tol: f64,
    pub learning_rate: f64,
    /// Relative likelihood change counted as quiet.
    pub tol: f64,
    /// Consecutive quiet iterations before stopping.
    pub patience: usize,
    /// Chains, steps and step size; the seed is derived per iteration and
    /// time point from [`AdmmConfig::seed`].
    pub langevin: LangevinConfig,
    pub decoder: DecoderSettings,
    pub seed: u64,
    pub adapt_kappa: bool,
    /// When false the likelihood is dropped: chains follow the prior, the
    /// decoder is frozen and no likelihood trace is recorded.
    pub likelihood: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            lambda: 20.0,
            kappa0: 10.0,
            iterations: 50,
            decoder_steps: 20,
            gfl_sweeps: 20,
            gfl_tol: 1e-6,
            learning_rate: 0.01,
            tol: 1e-5,
            patience: 5,
            langevin: LangevinConfig::default(),
            decoder: DecoderSettings::default(),
            seed: 0,
            adapt_kappa: true,
            likelihood: true,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.kappa0 > 0.0 && self.kappa0.is_finite()) {
            return bad(format!("kappa0 must be > 0, got {}", self.kappa0));
        }
        if self.iterations == 0 || self.decoder_steps == 0 || self.gfl_sweeps == 0 || self.patience == 0 {
            return bad("iterations, decoder steps, sweeps and patience must be >= 1".into());
        }
        if !(self.tol > 0.0) || !(self.gfl_tol > 0.0) {
            return bad("tolerances must be > 0".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be >= 0, got {}", self.learning_rate));
        }
        let d = self.decoder;
        if d.latent_dim == 0 || d.hidden == 0 || d.rank == 0 {
            return bad("decoder dimensions must be >= 1".into());
        }
        self.langevin.validate()
    }
}

/// Penalty change triggered by unbalanced residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KappaEvent {
    pub iteration: usize,
    pub from: f64,
    pub to: f64,
    pub r_primal: f64,
    pub r_dual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub r_primal: f64,
    pub r_dual: f64,
    /// Penalty after adaptation.
    pub kappa: f64,
    pub log_lik: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub records: Vec<IterationRecord>,
    pub kappa_events: Vec<KappaEvent>,
    pub converged: bool,
}

impl Diagnostics {
    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.log_lik).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("diagnostics", e);
        writeln!(out, "iteration,r_primal,r_dual,kappa,log_lik").map_err(io)?;
        for r in &self.records {
            let ll = r.log_lik.map(|v| format!("{v:.10e}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:.10e},{:.10e},{:.10e},{}",
                r.iteration, r.r_primal, r.r_dual, r.kappa, ll
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Writes a `T x d` matrix as CSV with a `t,mu_1..mu_d` header.
pub fn write_mu_csv<W: Write>(mu: ArrayView2<f64>, mut out: W) -> Result<()> {
    let io = |e| Error::io("mu", e);
    let header: Vec<String> = (1..=mu.ncols()).map(|j| format!("mu_{j}")).collect();
    writeln!(out, "t,{}", header.join(",")).map_err(io)?;
    for (t, row) in mu.outer_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(out, "{},{}", t + 1, cells.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Reads a matrix written by [`write_mu_csv`].
pub fn read_mu_csv(text: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("mu csv: empty".into()))?;
    let d = header.split(',').count().saturating_sub(1);
    if d == 0 {
        return Err(Error::Parse("mu csv: no columns".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + 1 {
            return Err(Error::Parse(format!("mu csv line {}: expected {} fields", idx + 2, d + 1)));
        }
        if cells[0].trim().parse::<usize>().ok() != Some(idx + 1) {
            return Err(Error::Parse(format!("mu csv line {}: expected t={}", idx + 2, idx + 1)));
        }
        for c in &cells[1..] {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("mu csv line {}: {e}", idx + 2)))?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, d), values).map_err(|e| Error::Parse(e.to_string()))
}

/// Everything the outer loop carries between iterations.
#[derive(Clone, Debug)]
pub struct AdmmState {
    pub mu: Array2<f64>,
    pub decoder: DecoderParameters,
    pub gfl: GflSolution,
    /// Scaled dual variable.
    pub w: Array2<f64>,
    pub kappa: f64,
    pub iteration: usize,
    adam: AdamState,
}

impl AdmmState {
    /// Zero `mu`, `w`, `gamma`, `beta`.
    pub fn new(t_len: usize, decoder: DecoderParameters, kappa: f64) -> Result<Self> {
        if t_len < 2 {
            return Err(Error::InvalidConfig(format!("need T >= 2 time points, got {t_len}")));
        }
        let d = decoder.shape().latent_dim;
        Ok(AdmmState {
            mu: Array2::zeros((t_len, d)),
            gfl: GflSolution::zeros(t_len, d),
            w: Array2::zeros((t_len, d)),
            adam: AdamState::new(&decoder),
            decoder,
            kappa,
            iteration: 0,
        })
    }

    pub fn nu(&self) -> Array2<f64> {
        self.gfl.nu()
    }

    /// `mu^t = (E[z^t | y^t] + kappa (nu^t - w^t)) / (1 + kappa)`.
    pub fn update_mu(&mut self, posterior_means: ArrayView2<f64>) -> Result<()> {
        if posterior_means.dim() != self.mu.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.nrows(),
                got: posterior_means.nrows(),
            });
        }
        if posterior_means.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior means".into()));
        }
        let k = self.kappa;
        let anchor = &self.nu() - &self.w;
        self.mu = (&posterior_means + &(anchor * k)) / (1.0 + k);
        Ok(())
    }

    /// `B` Adam steps on `-sum_t mean_s log P(y^t | z_s^t)` with the samples
    /// held fixed. Returns the objective before the first and after the last
    /// step.
    pub fn update_phi(
        &mut self,
        targets: &[Array2<f64>],
        samples: &[Array2<f64>],
        steps: usize,
        learning_rate: f64,
    ) -> Result<(f64, f64)> {
        if targets.len() != samples.len() {
            return Err(Error::DimensionMismatch {
                expected: targets.len(),
                got: samples.len(),
            });
        }
        let before = sampled_negative_log_likelihood(&self.decoder, targets, samples)?;
        for step in 0..steps {
            let grad = negative_log_likelihood_gradient(&self.decoder, targets, samples)?;
            adam_step(&mut self.decoder, &grad, &mut self.adam, learning_rate)
                .map_err(|e| e.context(format!("decoder step {}", step + 1)))?;
        }
        let after = sampled_negative_log_likelihood(&self.decoder, targets, samples)?;
        Ok((before, after))
    }

    /// Warm-started GFL proximal step on `mu + w`.
    pub fn update_gfl(&mut self, lambda: f64, sweeps: usize, tol: f64) -> Result<()> {
        let problem = GflProblem::new(&self.mu + &self.w, lambda, self.kappa)?;
        self.gfl = gfl::solve(&problem, &self.gfl, sweeps, tol)?;
        Ok(())
    }

    /// `w <- mu - nu + w`.
    pub fn update_dual(&mut self) {
        let nu = self.nu();
        self.w = &self.mu - &nu + &self.w;
    }

    /// RMS of `mu - nu` and of `nu - prev_nu`.
    pub fn residuals(&self, prev_nu: ArrayView2<f64>) -> (f64, f64) {
        let nu = self.nu();
        (rms(&(&self.mu - &nu)), rms(&(&nu - &prev_nu)))
    }

    /// Doubles `kappa` (halving `w`) when the primal residual dominates by a
    /// factor of ten, halves it (doubling `w`) in the opposite case.
    pub fn adapt_kappa(&mut self, r_primal: f64, r_dual: f64) -> Option<KappaEvent> {
        let factor = if r_primal > 10.0 * r_dual {
            2.0
        } else if r_dual > 10.0 * r_primal {
            0.5
        } else {
            return None;
        };
        let event = KappaEvent {
            iteration: self.iteration,
            from: self.kappa,
            to: self.kappa * factor,
            r_primal,
            r_dual,
        };
        self.kappa *= factor;
        self.w /= factor;
        log::info!(
            "iteration {}: kappa {} -> {} (r_primal {:.3e}, r_dual {:.3e})",
            event.iteration,
            event.from,
            event.to,
            r_primal,
            r_dual
        );
        Some(event)
    }
}

fn rms(a: &Array2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt()
}

/// `-sum_t mean_s log P(y^t | z_s^t)`.
pub fn sampled_negative_log_likelihood(
    decoder: &DecoderParameters,
    targets: &[Array2<f64>],
    samples: &[Array2<f64>],
) -> Result<f64> {
    let per_t: Vec<f64> = targets
        .par_iter()
        .zip(samples.par_iter())
        .map(|(y, z)| {
            let out = decoder.evaluate(z.view(), y.view(), Grads::None)?;
            Ok(out.log_lik.iter().sum::<f64>() / z.nrows() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(-per_t.iter().sum::<f64>())
}

/// Gradient of [`sampled_negative_log_likelihood`] with respect to the
/// decoder parameters. Per-t terms are reduced in time order.
pub fn negative_log_likelihood_gradient(
    decoder: &DecoderParameters,
    targets: &[Array2<f64>],
    samples: &[Array2<f64>],
) -> Result<DecoderParameters> {
    let per_t: Vec<DecoderParameters> = targets
        .par_iter()
        .zip(samples.par_iter())
        .map(|(y, z)| {
            let mut g = decoder
                .gradients(z.view(), y.view(), Grads::Parameters)?
                .grad_phi
                .expect("parameter gradient requested");
            g.scale(1.0 / z.nrows() as f64);
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = DecoderParameters::zeros(decoder.shape())?;
    for g in &per_t {
        total.add_scaled(g, -1.0);
    }
    Ok(total)
}

/// `count` prior draws `N(mu^t, I)` for every `t`, each from its own stream.
pub fn draw_prior_samples(mu: ArrayView2<f64>, count: usize, seed: u64) -> Vec<Array2<f64>> {
    mu.outer_iter()
        .enumerate()
        .map(|(t, row)| {
            let mut rng = seeding::stream(seed, &[t as u64]);
            langevin::sample_prior(row, count, &mut rng)
        })
        .collect()
}

/// Importance-free Monte Carlo estimate of `sum_t log P(y^t)` from prior
/// draws, stabilised per time point by its largest term:
/// `sum_t [C^t + log sum_u exp(log P(y^t | z_u^t) - C^t)] - T log s`.
pub fn approximate_log_likelihood(
    decoder: &DecoderParameters,
    targets: &[Array2<f64>],
    prior_samples: &[Array2<f64>],
) -> Result<f64> {
    if targets.len() != prior_samples.len() {
        return Err(Error::DimensionMismatch {
            expected: targets.len(),
            got: prior_samples.len(),
        });
    }
    let per_t: Vec<f64> = targets
        .par_iter()
        .zip(prior_samples.par_iter())
        .map(|(y, z)| {
            if z.nrows() == 0 {
                return Err(Error::InvalidConfig("need at least one prior sample".into()));
            }
            let ll = decoder.evaluate(z.view(), y.view(), Grads::None)?.log_lik;
            let c = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s = ll.iter().map(|v| (v - c).exp()).sum::<f64>();
            Ok(c + s.ln() - (z.nrows() as f64).ln())
        })
        .collect::<Result<_>>()?;
    Ok(per_t.iter().sum())
}

/// True when the last `patience` relative changes of `history` are all at
/// most `tol` in absolute value.
pub fn should_stop(history: &[f64], tol: f64, patience: usize) -> bool {
    if patience == 0 || history.len() < patience + 1 {
        return false;
    }
    history
        .windows(2)
        .rev()
        .take(patience)
        .all(|w| relative_change(w[0], w[1]) <= tol)
}

fn relative_change(prev: f64, next: f64) -> f64 {
    if prev == next {
        0.0
    } else {
        ((next - prev) / prev).abs()
    }
}

/// Output of [`fit`].
#[derive(Clone, Debug)]
pub struct FitResult {
    pub mu: Array2<f64>,
    pub decoder: DecoderParameters,
    pub gamma: Array1<f64>,
    pub beta: Array2<f64>,
    pub kappa: f64,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn nu(&self) -> Array2<f64> {
        GflSolution {
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            ..GflSolution::zeros(self.mu.nrows(), self.mu.ncols())
        }
        .nu()
    }
}

/// Runs the ADMM loop on a graph sequence.
pub fn fit(graphs: &GraphSequence, config: &AdmmConfig) -> Result<FitResult> {
    config.validate()?;
    let t_len = graphs.len();
    if t_len < 2 {
        return Err(Error::InvalidConfig(format!("need T >= 2 time points, got {t_len}")));
    }
    let ds = config.decoder;
    let shape = DecoderShape::new(ds.latent_dim, ds.hidden, graphs.n(), ds.rank, graphs.directed());
    let decoder = DecoderParameters::init(shape, &mut seeding::stream(config.seed, &[u64::MAX]))?;
    let mut state = AdmmState::new(t_len, decoder, config.kappa0)?;
    let targets: Vec<Array2<f64>> = graphs.graphs().iter().map(adjacency_target).collect();
    let mut diagnostics = Diagnostics::default();
    let mut lls = Vec::new();

    for a in 1..=config.iterations {
        state.iteration = a;
        let ctx = |e: Error| e.context(format!("ADMM iteration {a}"));
        let samples = sample_all(&state, &targets, config).map_err(ctx)?;
        let means = Array2::from_shape_fn((t_len, ds.latent_dim), |(t, j)| {
            samples[t].column(j).mean().expect("chains >= 1")
        });
        state.update_mu(means.view()).map_err(ctx)?;
        if config.likelihood {
            state
                .update_phi(&targets, &samples, config.decoder_steps, config.learning_rate)
                .map_err(ctx)?;
        }
        let prev_nu = state.nu();
        state
            .update_gfl(config.lambda, config.gfl_sweeps, config.gfl_tol)
            .map_err(ctx)?;
        state.update_dual();
        let (r_primal, r_dual) = state.residuals(prev_nu.view());
        if config.adapt_kappa {
            if let Some(event) = state.adapt_kappa(r_primal, r_dual) {
                diagnostics.kappa_events.push(event);
            }
        }
        let log_lik = if config.likelihood {
            let prior = draw_prior_samples(
                state.mu.view(),
                config.langevin.chains,
                seeding::derive_seed(config.seed, &[LIKELIHOOD_STREAM]),
            );
            Some(approximate_log_likelihood(&state.decoder, &targets, &prior).map_err(ctx)?)
        } else {
            None
        };
        diagnostics.records.push(IterationRecord {
            iteration: a,
            r_primal,
            r_dual,
            kappa: state.kappa,
            log_lik,
        });
        log::debug!(
            "iteration {a}: r_primal {r_primal:.3e} r_dual {r_dual:.3e} kappa {} log_lik {log_lik:?}",
            state.kappa
        );
        if let Some(ll) = log_lik {
            lls.push(ll);
            if should_stop(&lls, config.tol, config.patience) {
                diagnostics.converged = true;
                break;
            }
        }
    }

    Ok(FitResult {
        mu: state.mu,
        decoder: state.decoder,
        gamma: state.gfl.gamma,
        beta: state.gfl.beta,
        kappa: state.kappa,
        diagnostics,
    })
}

/// Stream path of the prior draws behind the likelihood trace.
const LIKELIHOOD_STREAM: u64 = u64::MAX - 2;

/// Posterior (or, with the likelihood off, prior-dynamics) samples for every
/// time point. The chains for time point `t` reuse the same noise in every
/// iteration.
fn sample_all(state: &AdmmState, targets: &[Array2<f64>], config: &AdmmConfig) -> Result<Vec<Array2<f64>>> {
    (0..targets.len())
        .into_par_iter()
        .map(|t| {
            let cfg = LangevinConfig {
                seed: seeding::derive_seed(config.seed, &[t as u64]),
                ..config.langevin
            };
            let mu = state.mu.row(t);
            let out = if config.likelihood {
                langevin::sample_posterior(&state.decoder, mu, targets[t].view(), &cfg)
            } else {
                langevin::sample_prior_dynamics(mu, &cfg)
            };
            out.map_err(|e| e.context(format!("time point {}", t + 1)))
        })
        .collect()
}

/// Column-wise mean of each sample matrix, stacked by time point.
pub fn posterior_means(samples: &[Array2<f64>]) -> Result<Array2<f64>> {
    let rows: Vec<Array1<f64>> = samples
        .iter()
        .map(|s| langevin::posterior_mean(s.view()))
        .collect::<Result<_>>()?;
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).map_err(|e| Error::InvalidConfig(e.to_string()))
}
