// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change point localisation from the fitted prior means.

use std::io::Write;

use ndarray::{Array1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma, Normal};

use crate::error::{Error, Result};
use crate::graph::ChangePointSet;
use crate::seeding;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gamma,
    DataDriven,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizationConfig {
    pub method: Method,
    pub alpha: f64,
    /// Draws per time point for the Gamma method; `None` picks 1000 for
    /// `d <= 5` and 500 otherwise.
    pub samples: Option<usize>,
    pub quantile: f64,
    pub min_spacing: usize,
    pub end_trim: usize,
    pub seed: u64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        LocalizationConfig {
            method: Method::DataDriven,
            alpha: 0.01,
            samples: None,
            quantile: 0.9,
            min_spacing: 5,
            end_trim: 5,
            seed: 0,
        }
    }
}

impl LocalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "quantile must be in (0, 1), got {}",
                self.quantile
            )));
        }
        if self.samples == Some(0) {
            return Err(Error::InvalidConfig("need at least one Gamma sample".into()));
        }
        Ok(())
    }

    pub fn samples_for(&self, d: usize) -> usize {
        self.samples.unwrap_or(if d <= 5 { 1000 } else { 500 })
    }
}

/// Per-time-point change statistics, indexed by `t = 2..=T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChangeMagnitudes {
    /// `||mu^t - mu^{t-1}||_2`, entry `t - 2`.
    pub delta: Vec<f64>,
    /// Standardised `delta` (zero when the spread is zero).
    pub zeta: Vec<f64>,
    /// Gamma method: `v_bar_m^t`; empty otherwise.
    pub statistic: Vec<f64>,
    pub threshold: f64,
    /// Times passing the threshold before post-processing.
    pub flagged: Vec<usize>,
}

impl ChangeMagnitudes {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::io("magnitudes", e);
        writeln!(out, "t,delta_mu,delta_zeta,threshold,flagged").map_err(io)?;
        for (k, (&d, &z)) in self.delta.iter().zip(&self.zeta).enumerate() {
            let t = k + 2;
            writeln!(
                out,
                "{t},{d:.10e},{z:.10e},{:.10e},{}",
                self.threshold,
                self.flagged.contains(&t) as u8
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// `||mu^t - mu^{t-1}||_2` for `t = 2..=T`.
pub fn consecutive_distances(mu: ArrayView2<f64>) -> Vec<f64> {
    (1..mu.nrows())
        .map(|t| {
            mu.row(t)
                .iter()
                .zip(mu.row(t - 1))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// `(delta - median) / sd`; all zeros when `sd` is zero.
pub fn standardize(delta: &[f64]) -> Vec<f64> {
    let sd = sample_sd(delta);
    if delta.is_empty() || sd == 0.0 || !sd.is_finite() {
        return vec![0.0; delta.len()];
    }
    let med = median(delta);
    delta.iter().map(|d| (d - med) / sd).collect()
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard deviation with denominator `len - 1`.
pub fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// The `1 - alpha/(T-1)` quantile of Gamma(shape `m d / 2`, scale `2/m`).
pub fn gamma_null_quantile(d: usize, m: usize, alpha: f64, t_len: usize) -> Result<f64> {
    if d == 0 || m == 0 || t_len < 2 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "gamma quantile needs d, m >= 1, T >= 2 and alpha in (0, 1); got d={d} m={m} T={t_len} alpha={alpha}"
        )));
    }
    let shape = m as f64 * d as f64 / 2.0;
    let rate = m as f64 / 2.0;
    let law = Gamma::new(shape, rate).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(law.inverse_cdf(1.0 - alpha / (t_len as f64 - 1.0)))
}

/// `v_bar_m^t`: mean of `||x||^2 / 2` over `m` draws `x ~ N(mu^t - mu^{t-1}, 2 I)`.
pub fn gamma_statistics(mu: ArrayView2<f64>, m: usize, seed: u64) -> Vec<f64> {
    let d = mu.ncols();
    let sd = 2f64.sqrt();
    (1..mu.nrows())
        .map(|t| {
            let diff: Array1<f64> = &mu.row(t) - &mu.row(t - 1);
            let mut rng = seeding::stream(seed, &[t as u64]);
            let mut acc = 0.0;
            for _ in 0..m {
                let mut sq = 0.0;
                for j in 0..d {
                    let x = diff[j] + sd * rng.sample::<f64, _>(StandardNormal);
                    sq += x * x;
                }
                acc += 0.5 * sq;
            }
            acc / m as f64
        })
        .collect()
}

/// Gamma-quantile rule followed by post-processing.
pub fn detect_gamma(mu: ArrayView2<f64>, config: &LocalizationConfig) -> Result<(ChangePointSet, ChangeMagnitudes)> {
    config.validate()?;
    let t_len = mu.nrows();
    if t_len < 2 {
        return Err(Error::InvalidConfig(format!("need T >= 2, got {t_len}")));
    }
    let m = config.samples_for(mu.ncols());
    let threshold = gamma_null_quantile(mu.ncols(), m, config.alpha, t_len)?;
    let statistic = gamma_statistics(mu, m, config.seed);
    let delta = consecutive_distances(mu);
    let zeta = standardize(&delta);
    let flagged: Vec<usize> = statistic
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(k, _)| k + 2)
        .collect();
    let points = post_process(&flagged, &zeta, config.min_spacing, config.end_trim, t_len);
    Ok((
        ChangePointSet::new(points)?,
        ChangeMagnitudes {
            delta,
            zeta,
            statistic,
            threshold,
            flagged,
        },
    ))
}

/// Standardised-distance rule: declare `t` with
/// `zeta^t > mean(zeta) + z_q sd(zeta)`, then post-process.
pub fn detect_data_driven(
    mu: ArrayView2<f64>,
    config: &LocalizationConfig,
) -> Result<(ChangePointSet, ChangeMagnitudes)> {
    config.validate()?;
    let t_len = mu.nrows();
    if t_len < 3 {
        return Err(Error::InvalidConfig(format!("data-driven threshold needs T >= 3, got {t_len}")));
    }
    let delta = consecutive_distances(mu);
    let sd = sample_sd(&delta);
    let zeta = standardize(&delta);
    let z_q = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(config.quantile);
    if sd == 0.0 {
        return Ok((
            ChangePointSet::empty(),
            ChangeMagnitudes {
                delta,
                zeta,
                statistic: Vec::new(),
                threshold: f64::INFINITY,
                flagged: Vec::new(),
            },
        ));
    }
    let threshold = mean(&zeta) + z_q * sample_sd(&zeta);
    let flagged: Vec<usize> = zeta
        .iter()
        .enumerate()
        .filter(|(_, &z)| z > threshold)
        .map(|(k, _)| k + 2)
        .collect();
    let points = post_process(&flagged, &zeta, config.min_spacing, config.end_trim, t_len);
    Ok((
        ChangePointSet::new(points)?,
        ChangeMagnitudes {
            delta,
            zeta,
            statistic: Vec::new(),
            threshold,
            flagged,
        },
    ))
}

pub fn detect(mu: ArrayView2<f64>, config: &LocalizationConfig) -> Result<(ChangePointSet, ChangeMagnitudes)> {
    match config.method {
        Method::Gamma => detect_gamma(mu, config),
        Method::DataDriven => detect_data_driven(mu, config),
    }
}

/// Resolves close pairs left to right, keeping the point with the larger
/// standardised magnitude (`zeta[t - 2]`), then drops points outside
/// `[end_trim, T - end_trim]`.
pub fn post_process(points: &[usize], zeta: &[f64], min_spacing: usize, end_trim: usize, t_len: usize) -> Vec<usize> {
    let score = |t: usize| zeta.get(t.wrapping_sub(2)).copied().unwrap_or(f64::NEG_INFINITY);
    let mut kept: Vec<usize> = Vec::with_capacity(points.len());
    for &p in points {
        match kept.last() {
            Some(&last) if p - last < min_spacing => {
                if score(p) > score(last) {
                    *kept.last_mut().expect("non-empty") = p;
                }
            }
            _ => kept.push(p),
        }
    }
    kept.retain(|&p| p >= end_trim && p + end_trim <= t_len);
    kept
}
