// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dynamic graph generators with planted change points.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderParameters, DecoderShape};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, ChangePointSet, GraphSequence, Partition};
use crate::seeding;

/// Contiguous intervals between consecutive change points of `1..=T`.
pub fn plant_schedule(t_len: usize, change_points: &[usize]) -> Result<Partition> {
    let cps = ChangePointSet::new(change_points.to_vec())?;
    Partition::from_change_points(t_len, &cps)
}

/// Temporally dependent stochastic block model with three even blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmSpec {
    pub n: usize,
    pub t_len: usize,
    pub blocks: usize,
    /// Within/between rates used on odd-numbered intervals.
    pub p_within: f64,
    pub p_between: f64,
    /// Within/between rates used on even-numbered intervals.
    pub q_within: f64,
    pub q_between: f64,
    /// Edge persistence.
    pub rho: f64,
    pub change_points: Vec<usize>,
    pub directed: bool,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            n: 50,
            t_len: 100,
            blocks: 3,
            p_within: 0.5,
            p_between: 0.3,
            q_within: 0.45,
            q_between: 0.2,
            rho: 0.5,
            change_points: vec![26, 51, 76],
            directed: true,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.p_within, self.p_between, self.q_within, self.q_between, self.rho];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig("SBM rates and rho must lie in [0, 1]".into()));
        }
        if self.n < 2 || self.blocks == 0 || self.blocks > self.n {
            return Err(Error::InvalidConfig(format!(
                "need n >= 2 and 1 <= blocks <= n, got n={} blocks={}",
                self.n, self.blocks
            )));
        }
        plant_schedule(self.t_len, &self.change_points).map(|_| ())
    }

    /// Block of node `i` (0-based) under an even split.
    pub fn block_of(&self, i: usize) -> usize {
        i * self.blocks / self.n
    }

    /// Edge probability matrix for even (`regime = 0`) or odd intervals.
    pub fn probability_matrix(&self, regime: usize) -> Array2<f64> {
        let (within, between) = if regime % 2 == 0 {
            (self.p_within, self.p_between)
        } else {
            (self.q_within, self.q_between)
        };
        let mut e = Array2::from_shape_fn((self.n, self.n), |(i, j)| {
            if self.block_of(i) == self.block_of(j) {
                within
            } else {
                between
            }
        });
        e.diag_mut().fill(0.0);
        e
    }
}

/// Simulates `y^1 ~ Bern(E^1)` and then, per dyad,
/// `y^{t+1} ~ Bern(rho (1 - E) + E)` after an edge and `Bern((1 - rho) E)`
/// otherwise, with `E = E^{t+1}`.
pub fn simulate_sbm(spec: &SbmSpec) -> Result<(GraphSequence, ChangePointSet)> {
    spec.validate()?;
    let partition = plant_schedule(spec.t_len, &spec.change_points)?;
    let regimes = regime_per_time(&partition);
    let mats = [spec.probability_matrix(0), spec.probability_matrix(1)];
    let mut rng = seeding::stream(spec.seed, &[]);
    let n = spec.n;
    let mut graphs: Vec<Adjacency> = Vec::with_capacity(spec.t_len);
    for (t, &regime) in regimes.iter().enumerate() {
        let e = &mats[regime % 2];
        let mut y = Adjacency::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i == j || (!spec.directed && j < i) {
                    continue;
                }
                let eij = e[[i, j]];
                let p = match t {
                    0 => eij,
                    _ if graphs[t - 1][[i, j]] == 1 => spec.rho * (1.0 - eij) + eij,
                    _ => (1.0 - spec.rho) * eij,
                };
                let edge = (rng.gen::<f64>() < p) as u8;
                y[[i, j]] = edge;
                if !spec.directed {
                    y[[j, i]] = edge;
                }
            }
        }
        graphs.push(y);
    }
    let seq = GraphSequence::new(spec.directed, n, graphs)?;
    Ok((seq, partition.change_points()))
}

fn regime_per_time(partition: &Partition) -> Vec<usize> {
    let mut out = vec![0; partition.t_len()];
    for (k, interval) in partition.intervals().iter().enumerate() {
        for t in interval.clone() {
            out[t - 1] = k;
        }
    }
    out
}

/// Graphs generated from latent vectors through a fixed random network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n: usize,
    pub t_len: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub rank: usize,
    /// Prior means on odd- and even-numbered intervals (every coordinate).
    pub means: [f64; 2],
    pub variance: f64,
    pub change_points: Vec<usize>,
    pub directed: bool,
    /// Seed of the generator weights.
    pub weight_seed: u64,
    /// Seed of the latent draws and edges.
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n: 50,
            t_len: 100,
            latent_dim: 10,
            hidden: 32,
            rank: 5,
            means: [-1.0, 5.0],
            variance: 0.1,
            change_points: vec![26, 51, 76],
            directed: true,
            weight_seed: 0,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.rank == 0 || self.hidden == 0 || self.n < 2 {
            return Err(Error::InvalidConfig(
                "generator needs n >= 2 and positive latent, hidden and rank sizes".into(),
            ));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidConfig("generator prior must be finite with variance >= 0".into()));
        }
        plant_schedule(self.t_len, &self.change_points).map(|_| ())
    }

    /// The fixed generator: every weight and bias uniform on
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn generator(&self) -> Result<DecoderParameters> {
        let shape = DecoderShape::new(self.latent_dim, self.hidden, self.n, self.rank, self.directed);
        let mut rng = seeding::stream(self.weight_seed, &[]);
        let mut p = DecoderParameters::init(shape, &mut rng)?;
        let a1 = 1.0 / (self.latent_dim as f64).sqrt();
        let a2 = 1.0 / (self.hidden as f64).sqrt();
        p.b1.mapv_inplace(|_| rng.gen_range(-a1..=a1));
        p.bu.mapv_inplace(|_| rng.gen_range(-a2..=a2));
        if let Some(bv) = p.bv.as_mut() {
            bv.mapv_inplace(|_| rng.gen_range(-a2..=a2));
        }
        Ok(p)
    }
}

/// Draws `z^t` from the regime prior of its interval and samples `y^t`
/// dyad-wise from the generator's edge probabilities.
pub fn simulate_generator(spec: &GeneratorSpec) -> Result<(GraphSequence, ChangePointSet)> {
    spec.validate()?;
    let generator = spec.generator()?;
    simulate_with_decoder(spec, &generator)
}

/// [`simulate_generator`] with an explicit generator network.
pub fn simulate_with_decoder(
    spec: &GeneratorSpec,
    generator: &DecoderParameters,
) -> Result<(GraphSequence, ChangePointSet)> {
    spec.validate()?;
    let partition = plant_schedule(spec.t_len, &spec.change_points)?;
    let regimes = regime_per_time(&partition);
    let mut rng = seeding::stream(spec.seed, &[]);
    let sd = spec.variance.sqrt();
    let mut graphs = Vec::with_capacity(spec.t_len);
    for &regime in &regimes {
        let mean = spec.means[regime % 2];
        let z = Array1::from_shape_fn(spec.latent_dim, |_| mean + sd * rng.sample::<f64, _>(StandardNormal));
        graphs.push(generator.sample_graph(z.view(), &mut rng)?);
    }
    let seq = GraphSequence::new(spec.directed, spec.n, graphs)?;
    Ok((seq, partition.change_points()))
}

#[derive(Serialize, Deserialize)]
struct Truth {
    change_points: Vec<usize>,
}

/// Writes `{"change_points": [...]}`.
pub fn write_truth(path: &Path, cps: &ChangePointSet) -> Result<()> {
    let text = serde_json::to_string(&Truth {
        change_points: cps.points().to_vec(),
    })
    .map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_truth(path: &Path) -> Result<ChangePointSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_change_points(&text)
}

/// Accepts `{"change_points": [...]}` or a bare JSON array.
pub fn parse_change_points(text: &str) -> Result<ChangePointSet> {
    let points = match serde_json::from_str::<Truth>(text) {
        Ok(t) => t.change_points,
        Err(_) => serde_json::from_str::<Vec<usize>>(text)
            .map_err(|e| Error::Parse(format!("change points: {e}")))?,
    };
    ChangePointSet::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let p = plant_schedule(100, &[26, 51, 76]).unwrap();
        assert_eq!(p.intervals(), &[1..=25, 26..=50, 51..=75, 76..=100]);
        assert_eq!(plant_schedule(7, &[]).unwrap().intervals(), &[1..=7]);
        assert_eq!(plant_schedule(10, &[5]).unwrap().intervals(), &[1..=4, 5..=10]);
        assert!(plant_schedule(10, &[5, 3]).is_err());
    }

    #[test]
    fn sbm_probability_matrices() {
        let spec = SbmSpec {
            n: 6,
            ..Default::default()
        };
        let p = spec.probability_matrix(0);
        assert_eq!(p[[0, 1]], 0.5);
        assert_eq!(p[[0, 2]], 0.3);
        assert_eq!(p[[0, 0]], 0.0);
        let q = spec.probability_matrix(1);
        assert_eq!(q[[4, 5]], 0.45);
        assert_eq!(q[[5, 0]], 0.2);
    }

    #[test]
    fn full_persistence_keeps_edges() {
        let spec = SbmSpec {
            n: 12,
            t_len: 20,
            rho: 1.0,
            change_points: vec![11],
            seed: 4,
            ..Default::default()
        };
        let (g, truth) = simulate_sbm(&spec).unwrap();
        assert_eq!(truth.points(), &[11]);
        for t in 1..20 {
            let (a, b) = (&g.graphs()[t - 1], &g.graphs()[t]);
            assert!(a.iter().zip(b.iter()).all(|(&x, &y)| x <= y));
        }
    }

    #[test]
    fn deterministic_and_undirected_variant() {
        let spec = SbmSpec {
            n: 9,
            t_len: 6,
            change_points: vec![4],
            directed: false,
            seed: 2,
            ..Default::default()
        };
        let (a, _) = simulate_sbm(&spec).unwrap();
        let (b, _) = simulate_sbm(&spec).unwrap();
        assert_eq!(a, b);
        assert!(!a.directed());
        for y in a.graphs() {
            assert_eq!(y, &y.t());
        }
    }

    #[test]
    fn zero_generator_is_a_coin_flip() {
        let spec = GeneratorSpec {
            n: 40,
            t_len: 10,
            change_points: vec![6],
            ..Default::default()
        };
        let zero = DecoderParameters::zeros(DecoderShape::new(10, 32, 40, 5, true)).unwrap();
        let (g, _) = simulate_with_decoder(&spec, &zero).unwrap();
        let edges: usize = g.graphs().iter().map(|y| y.iter().map(|&v| v as usize).sum::<usize>()).sum();
        let trials = (10 * 40 * 39) as f64;
        let rate = edges as f64 / trials;
        assert!((rate - 0.5).abs() < 3.0 * (0.25 / trials).sqrt());
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        let cps = ChangePointSet::new(vec![26, 51, 76]).unwrap();
        write_truth(&path, &cps).unwrap();
        assert_eq!(read_truth(&path).unwrap(), cps);
        assert_eq!(parse_change_points("[3, 9]").unwrap().points(), &[3, 9]);
        assert!(parse_change_points("{\"x\": 1}").is_err());
    }
}
