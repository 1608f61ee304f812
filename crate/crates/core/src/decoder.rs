// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neural graph decoder.
//!
//! A latent vector `z` is mapped through one `tanh` hidden layer to node
//! factors `U` (and `V` for directed graphs, a second linear head). Edge
//! probabilities are `sigmoid(U V^T)` or `sigmoid(U U^T)`. Gradients with
//! respect to `z` and to every weight are derived by hand (reverse mode) and
//! evaluated for a whole batch of latent vectors at once.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Adjacency;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Dimensions of a decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderShape {
    pub latent_dim: usize,
    pub hidden: usize,
    pub nodes: usize,
    pub rank: usize,
    pub directed: bool,
}

impl DecoderShape {
    pub fn new(latent_dim: usize, hidden: usize, nodes: usize, rank: usize, directed: bool) -> Self {
        DecoderShape {
            latent_dim,
            hidden,
            nodes,
            rank,
            directed,
        }
    }

    fn factor_len(&self) -> usize {
        self.nodes * self.rank
    }

    fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.nodes == 0 || self.rank == 0 {
            return Err(Error::InvalidConfig(format!(
                "decoder dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// All weights of the decoder. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParameters {
    shape: DecoderShape,
    /// hidden x latent
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// (nodes * rank) x hidden, row `i * rank + c` produces `U[i, c]`
    pub wu: Array2<f64>,
    pub bu: Array1<f64>,
    /// Second head producing `V`; present iff the decoder is directed.
    pub wv: Option<Array2<f64>>,
    pub bv: Option<Array1<f64>>,
}

impl DecoderParameters {
    pub fn zeros(shape: DecoderShape) -> Result<Self> {
        shape.validate()?;
        let nk = shape.factor_len();
        Ok(DecoderParameters {
            shape,
            w1: Array2::zeros((shape.hidden, shape.latent_dim)),
            b1: Array1::zeros(shape.hidden),
            wu: Array2::zeros((nk, shape.hidden)),
            bu: Array1::zeros(nk),
            wv: shape.directed.then(|| Array2::zeros((nk, shape.hidden))),
            bv: shape.directed.then(|| Array1::zeros(nk)),
        })
    }

    /// Weights uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init<R: Rng + ?Sized>(shape: DecoderShape, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        let a1 = 1.0 / (shape.latent_dim as f64).sqrt();
        let a2 = 1.0 / (shape.hidden as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.gen_range(-a1..=a1));
        p.wu.mapv_inplace(|_| rng.gen_range(-a2..=a2));
        if let Some(wv) = p.wv.as_mut() {
            wv.mapv_inplace(|_| rng.gen_range(-a2..=a2));
        }
        Ok(p)
    }

    pub fn shape(&self) -> DecoderShape {
        self.shape
    }

    /// Flat views of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.wu.as_slice().expect("standard layout"),
            self.bu.as_slice().expect("standard layout"),
        ];
        if let (Some(wv), Some(bv)) = (&self.wv, &self.bv) {
            out.push(wv.as_slice().expect("standard layout"));
            out.push(bv.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.wu.as_slice_mut().expect("standard layout"),
            self.bu.as_slice_mut().expect("standard layout"),
        ];
        if let (Some(wv), Some(bv)) = (&mut self.wv, &mut self.bv) {
            out.push(wv.as_slice_mut().expect("standard layout"));
            out.push(bv.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &DecoderParameters, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    fn check_latent(&self, z: ArrayView1<f64>) -> Result<()> {
        if z.len() != self.shape.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.shape.latent_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    fn check_target(&self, rows: usize, cols: usize) -> Result<()> {
        let n = self.shape.nodes;
        if rows != n || cols != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: if rows != n { rows } else { cols },
            });
        }
        Ok(())
    }

    /// Edge probability matrix for one latent vector; the diagonal is zero.
    pub fn forward(&self, z: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_latent(z)?;
        let zs = z.insert_axis(Axis(0));
        let act = self.activations(zs);
        let n = self.shape.nodes;
        let mut r = self.logits(&act, 0).mapv(sigmoid);
        for i in 0..n {
            r[[i, i]] = 0.0;
        }
        Ok(r)
    }

    /// Bernoulli log-likelihood of `y` given `z` over all dyads.
    pub fn log_likelihood(&self, z: ArrayView1<f64>, y: &Adjacency) -> Result<f64> {
        self.check_latent(z)?;
        let target = adjacency_target(y);
        let out = self.evaluate(z.insert_axis(Axis(0)), target.view(), Grads::None)?;
        Ok(out.log_lik[0])
    }

    pub fn grad_z(&self, z: ArrayView1<f64>, y: &Adjacency) -> Result<Array1<f64>> {
        self.check_latent(z)?;
        let target = adjacency_target(y);
        let out = self.evaluate(z.insert_axis(Axis(0)), target.view(), Grads::Latent)?;
        Ok(out.grad_z.expect("requested").row(0).to_owned())
    }

    pub fn grad_phi(&self, z: ArrayView1<f64>, y: &Adjacency) -> Result<DecoderParameters> {
        self.check_latent(z)?;
        let target = adjacency_target(y);
        let out = self.evaluate(z.insert_axis(Axis(0)), target.view(), Grads::Parameters)?;
        Ok(out.grad_phi.expect("requested"))
    }

    /// Evaluates log-likelihoods and optional gradients for a batch of latent
    /// vectors (rows of `zs`) against one target. `target` may be real-valued
    /// in `[0, 1]`; entries on the diagonal are ignored.
    ///
    /// Parameter gradients are summed over the batch.
    pub fn evaluate(
        &self,
        zs: ArrayView2<f64>,
        target: ArrayView2<f64>,
        grads: Grads,
    ) -> Result<BatchEvaluation> {
        self.evaluate_impl(zs, target, grads, true)
    }

    /// Like [`Self::evaluate`] but skips the log-likelihood values, which
    /// are left empty. Used inside samplers and optimisers.
    pub fn gradients(
        &self,
        zs: ArrayView2<f64>,
        target: ArrayView2<f64>,
        grads: Grads,
    ) -> Result<BatchEvaluation> {
        if grads == Grads::None {
            return Err(Error::InvalidConfig("gradients() needs a gradient kind".into()));
        }
        self.evaluate_impl(zs, target, grads, false)
    }

    fn evaluate_impl(
        &self,
        zs: ArrayView2<f64>,
        target: ArrayView2<f64>,
        grads: Grads,
        with_ll: bool,
    ) -> Result<BatchEvaluation> {
        if zs.ncols() != self.shape.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.shape.latent_dim,
                got: zs.ncols(),
            });
        }
        self.check_target(target.nrows(), target.ncols())?;
        let n = self.shape.nodes;
        let k = self.shape.rank;
        let directed = self.shape.directed;
        let batch = zs.nrows();
        let act = self.activations(zs);

        let want_grad = !matches!(grads, Grads::None);
        let mut log_lik = Vec::with_capacity(batch);
        let mut du = Array2::<f64>::zeros((if want_grad { batch } else { 0 }, n * k));
        let mut dv = Array2::<f64>::zeros((if want_grad && directed { batch } else { 0 }, n * k));
        let target = target.as_standard_layout();
        let y = target.as_slice().expect("standard layout");
        let mut score = Array2::<f64>::zeros((n, n));

        for r in 0..batch {
            let u = factor(&act.u, r, n, k);
            let v = act.v.as_ref().map(|v| factor(v, r, n, k));
            let logits = standard(match v {
                Some(v) => u.dot(&v.t()),
                None => u.dot(&u.t()),
            });
            let logits = logits.as_slice().expect("fresh array");
            let sc = score.as_slice_mut().expect("standard layout");
            let mut ll = 0.0;
            for i in 0..n {
                let first = if directed { 0 } else { i + 1 };
                for j in first..n {
                    if i == j {
                        continue;
                    }
                    let idx = i * n + j;
                    let slope = if with_ll {
                        let (value, slope) = bernoulli_term(logits[idx], y[idx]);
                        ll += value;
                        slope
                    } else {
                        bernoulli_slope(logits[idx], y[idx])
                    };
                    sc[idx] = slope;
                    if !directed {
                        sc[j * n + i] = slope;
                    }
                }
            }
            if with_ll {
                log_lik.push(ll);
            }
            if want_grad {
                let mut du_r = du.row_mut(r).into_shape_with_order((n, k)).expect("contiguous");
                match v {
                    Some(v) => {
                        ndarray::linalg::general_mat_mul(1.0, &score, &v, 0.0, &mut du_r);
                        let mut dv_r = dv.row_mut(r).into_shape_with_order((n, k)).expect("contiguous");
                        ndarray::linalg::general_mat_mul(1.0, &score.t(), &u, 0.0, &mut dv_r);
                    }
                    None => ndarray::linalg::general_mat_mul(1.0, &score, &u, 0.0, &mut du_r),
                }
            }
        }

        if log_lik.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder log-likelihood".into()));
        }
        let mut out = BatchEvaluation {
            log_lik,
            grad_z: None,
            grad_phi: None,
        };
        if !want_grad {
            return Ok(out);
        }

        let mut dh = du.dot(&self.wu);
        if let (true, Some(wv)) = (directed, &self.wv) {
            dh += &dv.dot(wv);
        }
        let da1 = dh * act.h.mapv(|h| 1.0 - h * h);
        match grads {
            Grads::Latent => out.grad_z = Some(da1.dot(&self.w1)),
            Grads::Parameters => {
                out.grad_phi = Some(DecoderParameters {
                    shape: self.shape,
                    w1: standard(da1.t().dot(&zs)),
                    b1: da1.sum_axis(Axis(0)),
                    wu: standard(du.t().dot(&act.h)),
                    bu: du.sum_axis(Axis(0)),
                    wv: directed.then(|| standard(dv.t().dot(&act.h))),
                    bv: directed.then(|| dv.sum_axis(Axis(0))),
                })
            }
            Grads::None => unreachable!(),
        }
        Ok(out)
    }

    fn activations(&self, zs: ArrayView2<f64>) -> Activations {
        let h = (zs.dot(&self.w1.t()) + &self.b1).mapv(f64::tanh);
        let u = standard(h.dot(&self.wu.t()) + &self.bu);
        let v = match (&self.wv, &self.bv) {
            (Some(wv), Some(bv)) => Some(standard(h.dot(&wv.t()) + bv)),
            _ => None,
        };
        Activations { h, u, v }
    }

    fn logits(&self, act: &Activations, row: usize) -> Array2<f64> {
        let (n, k) = (self.shape.nodes, self.shape.rank);
        let u = factor(&act.u, row, n, k);
        match &act.v {
            Some(v) => u.dot(&factor(v, row, n, k).t()),
            None => u.dot(&u.t()),
        }
    }

    /// Samples a binary graph from the edge probabilities at `z`.
    pub fn sample_graph<R: Rng + ?Sized>(&self, z: ArrayView1<f64>, rng: &mut R) -> Result<Adjacency> {
        let r = self.forward(z)?;
        let n = self.shape.nodes;
        let mut y = Adjacency::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i == j || (!self.shape.directed && j < i) {
                    continue;
                }
                let e = (rng.gen::<f64>() < r[[i, j]]) as u8;
                y[[i, j]] = e;
                if !self.shape.directed {
                    y[[j, i]] = e;
                }
            }
        }
        Ok(y)
    }
}

/// Which gradients [`DecoderParameters::evaluate`] should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grads {
    None,
    Latent,
    Parameters,
}

/// Output of a batched decoder evaluation.
#[derive(Clone, Debug)]
pub struct BatchEvaluation {
    pub log_lik: Vec<f64>,
    /// batch x latent, one gradient per row
    pub grad_z: Option<Array2<f64>>,
    /// summed over the batch
    pub grad_phi: Option<DecoderParameters>,
}

struct Activations {
    h: Array2<f64>,
    u: Array2<f64>,
    v: Option<Array2<f64>>,
}

fn factor(flat: &Array2<f64>, row: usize, n: usize, k: usize) -> ArrayView2<'_, f64> {
    flat.row(row)
        .into_shape_with_order((n, k))
        .expect("row is contiguous")
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Clamped Bernoulli log-mass and its derivative with respect to the logit.
fn bernoulli_term(logit: f64, y: f64) -> (f64, f64) {
    let e = (-logit).exp();
    let p = 1.0 / (1.0 + e);
    if p < PROB_CLAMP {
        (y * PROB_CLAMP.ln() + (1.0 - y) * (-PROB_CLAMP).ln_1p(), 0.0)
    } else if p > 1.0 - PROB_CLAMP {
        (y * (-PROB_CLAMP).ln_1p() + (1.0 - y) * PROB_CLAMP.ln(), 0.0)
    } else {
        // log p = -log(1 + e), log(1 - p) = log p - logit
        let log_p = -(1.0 + e).ln();
        (log_p - (1.0 - y) * logit, y - p)
    }
}

fn bernoulli_slope(logit: f64, y: f64) -> f64 {
    let p = sigmoid(logit);
    let inside = p >= PROB_CLAMP && p <= 1.0 - PROB_CLAMP;
    if inside {
        y - p
    } else {
        0.0
    }
}

/// Converts a binary adjacency matrix into a real-valued likelihood target.
pub fn adjacency_target(y: &Adjacency) -> Array2<f64> {
    y.mapv(f64::from)
}

const CHECKPOINT_FORMAT: &str = "netcpd-decoder";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    shape: DecoderShape,
    w1: Vec<f64>,
    b1: Vec<f64>,
    wu: Vec<f64>,
    bu: Vec<f64>,
    wv: Option<Vec<f64>>,
    bv: Option<Vec<f64>>,
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl Serialize for DecoderParameters {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.shape,
            w1: self.w1.iter().copied().collect(),
            b1: self.b1.to_vec(),
            wu: self.wu.iter().copied().collect(),
            bu: self.bu.to_vec(),
            wv: self.wv.as_ref().map(|w| w.iter().copied().collect()),
            bv: self.bv.as_ref().map(|b| b.to_vec()),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DecoderParameters {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let c = Checkpoint::deserialize(deserializer)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        let s = c.shape;
        let nk = s.nodes * s.rank;
        let mat = |v: Vec<f64>, r: usize, cols: usize| {
            Array2::from_shape_vec((r, cols), v).map_err(|e| D::Error::custom(e.to_string()))
        };
        let vec = |v: Vec<f64>, len: usize| {
            if v.len() == len {
                Ok(Array1::from(v))
            } else {
                Err(D::Error::custom(format!("expected {len} values, got {}", v.len())))
            }
        };
        let (wv, bv) = match (s.directed, c.wv, c.bv) {
            (true, Some(wv), Some(bv)) => (Some(mat(wv, nk, s.hidden)?), Some(vec(bv, nk)?)),
            (false, None, None) => (None, None),
            _ => return Err(D::Error::custom("second head present iff directed")),
        };
        Ok(DecoderParameters {
            shape: s,
            w1: mat(c.w1, s.hidden, s.latent_dim)?,
            b1: vec(c.b1, s.hidden)?,
            wu: mat(c.wu, nk, s.hidden)?,
            bu: vec(c.bu, nk)?,
            wv,
            bv,
        })
    }
}
