// SPDX-License-Identifier: MIT OR Apache-2.0

//! Short-run Langevin sampling of `z | y` under the prior `N(mu, I)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderParameters, Grads};
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LangevinConfig {
    /// Step size `delta`.
    pub step_size: f64,
    /// Langevin steps per chain.
    pub steps: usize,
    /// Independent chains, one sample each.
    pub chains: usize,
    pub seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            step_size: 0.5,
            steps: 30,
            chains: 200,
            seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "Langevin step size must be >= 0, got {}",
                self.step_size
            )));
        }
        if self.steps == 0 || self.chains == 0 {
            return Err(Error::InvalidConfig(
                "Langevin steps and chains must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Runs `cfg.chains` Langevin chains started at `mu`:
///
/// `z <- z + delta * (score(z) - (z - mu)) + sqrt(2 delta) * eps`
///
/// `score` returns the log-likelihood gradient for every row of a batch.
/// Each chain draws its noise from its own stream derived from `cfg.seed`.
/// Returns the final states, one row per chain.
pub fn run_langevin<F>(mu: ArrayView1<f64>, cfg: &LangevinConfig, mut score: F) -> Result<Array2<f64>>
where
    F: FnMut(ArrayView2<f64>) -> Result<Array2<f64>>,
{
    cfg.validate()?;
    let d = mu.len();
    let mut rngs: Vec<_> = (0..cfg.chains)
        .map(|c| seeding::stream(cfg.seed, &[c as u64]))
        .collect();
    let mut z = Array2::from_shape_fn((cfg.chains, d), |(_, j)| mu[j]);
    let delta = cfg.step_size;
    let noise_scale = (2.0 * delta).sqrt();
    for step in 0..cfg.steps {
        let grad = score(z.view())?;
        for (c, (mut row, g)) in z.outer_iter_mut().zip(grad.outer_iter()).enumerate() {
            let rng = &mut rngs[c];
            for j in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                row[j] += delta * (g[j] - (row[j] - mu[j])) + noise_scale * eps;
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "Langevin state at step {step}, chain {c}"
                )));
            }
        }
    }
    Ok(z)
}

/// Posterior samples of `z` given one observed (possibly real-valued) target.
pub fn sample_posterior(
    decoder: &DecoderParameters,
    mu: ArrayView1<f64>,
    target: ArrayView2<f64>,
    cfg: &LangevinConfig,
) -> Result<Array2<f64>> {
    run_langevin(mu, cfg, |zs| {
        Ok(decoder
            .gradients(zs, target, Grads::Latent)?
            .grad_z
            .expect("latent gradient requested"))
    })
}

/// Langevin dynamics with the likelihood term switched off; the chain is an
/// Euler-Maruyama discretisation of an Ornstein-Uhlenbeck process whose
/// stationary law is close to the prior.
pub fn sample_prior_dynamics(mu: ArrayView1<f64>, cfg: &LangevinConfig) -> Result<Array2<f64>> {
    run_langevin(mu, cfg, |zs| Ok(Array2::zeros(zs.raw_dim())))
}

/// Arithmetic mean of the sample rows.
pub fn posterior_mean(samples: ArrayView2<f64>) -> Result<Array1<f64>> {
    samples
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::InvalidConfig("posterior mean of zero samples".into()))
}

/// `count` i.i.d. draws from `N(mu, I)`, one per row.
pub fn sample_prior<R: Rng + ?Sized>(mu: ArrayView1<f64>, count: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((count, mu.len()), |(_, j)| {
        mu[j] + rng.sample::<f64, _>(StandardNormal)
    })
}
