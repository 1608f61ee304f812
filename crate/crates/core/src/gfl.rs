// SPDX-License-Identifier: MIT OR Apache-2.0

//! Group fused lasso proximal step solved as a group lasso.
//!
//! Minimises over `(gamma, beta)`
//!
//! ```text
//! lambda * sum_t ||beta_t||_2 + kappa/2 * ||M - 1 gamma - X beta||_F^2
//! ```
//!
//! where `X` is the `T x (T-1)` lower-triangular design with `X[i, j] = 1` for
//! `i > j`, so that `nu = 1 gamma + X beta` has `nu_1 = gamma` and
//! `nu_{t+1} - nu_t = beta_t`. `X` is never formed: `X[., t]^T v` is the
//! suffix sum `sum_{i > t} v_i`.
//!
//! Row indices of `beta` are 1-based in the public API (`t in 1..T`).

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Target, penalty and augmentation of one proximal problem.
#[derive(Clone, Debug)]
pub struct GflProblem {
    target: Array2<f64>,
    lambda: f64,
    kappa: f64,
}

impl GflProblem {
    pub fn new(target: Array2<f64>, lambda: f64, kappa: f64) -> Result<Self> {
        if target.nrows() < 2 {
            return Err(Error::InvalidConfig(format!(
                "group fused lasso needs T >= 2, got {}",
                target.nrows()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("kappa must be finite and > 0, got {kappa}")));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("group fused lasso target".into()));
        }
        Ok(GflProblem {
            target,
            lambda,
            kappa,
        })
    }

    pub fn target(&self) -> ArrayView2<'_, f64> {
        self.target.view()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.target.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.target.ncols()
    }

    /// `lambda * sum ||beta_t|| + kappa/2 * ||M - nu||^2`.
    pub fn objective(&self, sol: &GflSolution) -> f64 {
        let penalty: f64 = sol.beta.outer_iter().map(|r| norm(r.iter())).sum();
        let fit: f64 = (&self.target - &sol.nu()).iter().map(|v| v * v).sum();
        self.lambda * penalty + 0.5 * self.kappa * fit
    }

    fn residual(&self, sol: &GflSolution) -> Array2<f64> {
        &self.target - &sol.nu()
    }
}

/// `(gamma, beta)` together with solver diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct GflSolution {
    pub gamma: Array1<f64>,
    /// `(T-1) x d`; row `t - 1` holds `nu_{t+1} - nu_t`.
    pub beta: Array2<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
    /// Objective after each sweep.
    pub objective_trace: Vec<f64>,
}

impl GflSolution {
    pub fn zeros(t_len: usize, d: usize) -> Self {
        GflSolution {
            gamma: Array1::zeros(d),
            beta: Array2::zeros((t_len.saturating_sub(1), d)),
            kkt_residual: f64::INFINITY,
            sweeps: 0,
            objective_trace: Vec::new(),
        }
    }

    /// `nu = 1 gamma + X beta`, built by cumulative sums.
    pub fn nu(&self) -> Array2<f64> {
        let d = self.gamma.len();
        let t_len = self.beta.nrows() + 1;
        let mut nu = Array2::zeros((t_len, d));
        nu.row_mut(0).assign(&self.gamma);
        for t in 1..t_len {
            let next = &nu.row(t - 1) + &self.beta.row(t - 1);
            nu.row_mut(t).assign(&next);
        }
        nu
    }

    /// Splits `nu` back into `(gamma, beta)`.
    pub fn from_nu(nu: ArrayView2<f64>) -> Self {
        let t_len = nu.nrows();
        let mut sol = GflSolution::zeros(t_len, nu.ncols());
        sol.gamma.assign(&nu.row(0));
        for t in 1..t_len {
            let diff = &nu.row(t) - &nu.row(t - 1);
            sol.beta.row_mut(t - 1).assign(&diff);
        }
        sol
    }
}

/// `X[., t]^T X[., t] = T - t` for 1-based column `t`.
pub fn build_design_column_dot(t_len: usize, t: usize) -> Result<usize> {
    if t == 0 || t >= t_len {
        return Err(Error::IndexOutOfRange {
            index: t,
            len: t_len.saturating_sub(1),
        });
    }
    Ok(t_len - t)
}

/// Closed-form block update of row `t` (1-based) of `beta` given all other
/// rows and `gamma`.
pub fn update_beta_row(
    problem: &GflProblem,
    gamma: &Array1<f64>,
    beta: &Array2<f64>,
    t: usize,
) -> Result<Array1<f64>> {
    let t_len = problem.len();
    let weight = build_design_column_dot(t_len, t)? as f64;
    let current = GflSolution {
        gamma: gamma.clone(),
        beta: beta.clone(),
        ..GflSolution::zeros(t_len, problem.dim())
    };
    let residual = problem.residual(&current);
    // partial residual excluding beta_t: add beta_t back on rows i > t
    let mut b = residual.slice(ndarray::s![t.., ..]).sum_axis(Axis(0));
    b.scaled_add(weight, &beta.row(t - 1));
    b *= problem.kappa;
    Ok(shrink(b, problem.lambda, problem.kappa * weight))
}

fn shrink(mut b: Array1<f64>, lambda: f64, curvature: f64) -> Array1<f64> {
    let nb = norm(b.iter());
    if nb <= lambda {
        b.fill(0.0);
        return b;
    }
    b *= (1.0 - lambda / nb) / curvature;
    b
}

/// `gamma = mean over t of (M - X beta)`.
pub fn update_gamma(problem: &GflProblem, beta: &Array2<f64>) -> Array1<f64> {
    let shifted = GflSolution {
        gamma: Array1::zeros(problem.dim()),
        beta: beta.clone(),
        ..GflSolution::zeros(problem.len(), problem.dim())
    };
    problem.residual(&shifted).mean_axis(Axis(0)).expect("T >= 2")
}

/// Largest violation of the optimality conditions over the rows of `beta`.
pub fn kkt_residual(problem: &GflProblem, sol: &GflSolution) -> f64 {
    let residual = problem.residual(sol);
    let suffix = suffix_sums(&residual);
    let mut worst: f64 = 0.0;
    for t in 1..problem.len() {
        let g = &suffix.row(t) * problem.kappa;
        let row = sol.beta.row(t - 1);
        let nb = norm(row.iter());
        let violation = if nb > 0.0 {
            norm(
                row.iter()
                    .zip(g.iter())
                    .map(|(b, gi)| problem.lambda * b / nb - gi)
                    .collect::<Vec<_>>()
                    .iter(),
            )
        } else {
            (norm(g.iter()) - problem.lambda).max(0.0)
        };
        worst = worst.max(violation);
    }
    worst
}

/// Row `t` holds `sum_{i >= t} r_i` (0-based), so row `t` for 1-based column
/// `t` is `X[., t]^T r`. Row `T` is zero.
fn suffix_sums(r: &Array2<f64>) -> Array2<f64> {
    let (t_len, d) = r.dim();
    let mut s = Array2::zeros((t_len + 1, d));
    for i in (0..t_len).rev() {
        let next = &s.row(i + 1) + &r.row(i);
        s.row_mut(i).assign(&next);
    }
    s
}

/// Block coordinate descent: ascending sweeps over the rows of `beta`, each
/// followed by a `gamma` update, until the KKT residual drops to `tol` or
/// `max_sweeps` sweeps have run.
pub fn solve(problem: &GflProblem, init: &GflSolution, max_sweeps: usize, tol: f64) -> Result<GflSolution> {
    let (t_len, d) = (problem.len(), problem.dim());
    if max_sweeps == 0 {
        return Err(Error::InvalidConfig("max_sweeps must be >= 1".into()));
    }
    if init.gamma.len() != d || init.beta.dim() != (t_len - 1, d) {
        return Err(Error::DimensionMismatch {
            expected: t_len - 1,
            got: init.beta.nrows(),
        });
    }
    let mut sol = GflSolution {
        gamma: init.gamma.clone(),
        beta: init.beta.clone(),
        kkt_residual: f64::INFINITY,
        sweeps: 0,
        objective_trace: Vec::with_capacity(max_sweeps),
    };
    let kappa = problem.kappa;
    for _ in 0..max_sweeps {
        let mut residual = problem.residual(&sol);
        let suffix = suffix_sums(&residual);
        // every row i > t has been shifted by -(sum of earlier deltas)
        let mut shift = Array1::<f64>::zeros(d);
        for t in 1..t_len {
            let weight = (t_len - t) as f64;
            let mut b = &suffix.row(t) - &(&shift * weight);
            b.scaled_add(weight, &sol.beta.row(t - 1));
            b *= kappa;
            let new_row = shrink(b, problem.lambda, kappa * weight);
            let delta = &new_row - &sol.beta.row(t - 1);
            shift += &delta;
            sol.beta.row_mut(t - 1).assign(&new_row);
        }
        residual = problem.residual(&sol);
        let mean = residual.mean_axis(Axis(0)).expect("T >= 2");
        sol.gamma += &mean;
        sol.sweeps += 1;
        sol.objective_trace.push(problem.objective(&sol));
        sol.kkt_residual = kkt_residual(problem, &sol);
        if sol.kkt_residual <= tol {
            break;
        }
    }
    Ok(sol)
}

fn norm<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_target(t_len: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t_len, d), |_| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn design_column_dot() {
        assert_eq!(build_design_column_dot(3, 1).unwrap(), 2);
        assert_eq!(build_design_column_dot(3, 2).unwrap(), 1);
        assert_eq!(build_design_column_dot(100, 99).unwrap(), 1);
        assert!(build_design_column_dot(3, 3).is_err());
        assert!(build_design_column_dot(3, 0).is_err());
    }

    #[test]
    fn beta_row_without_penalty() {
        // M chosen so that b_1 = kappa * (M_2 + M_3) = (2, 4)
        let m = array![[0.0, 0.0], [1.0, 1.0], [1.0, 3.0]];
        let p = GflProblem::new(m, 0.0, 1.0).unwrap();
        let row = update_beta_row(&p, &array![0.0, 0.0], &Array2::zeros((2, 2)), 1).unwrap();
        assert_eq!(row, array![1.0, 2.0]);
    }

    #[test]
    fn beta_row_thresholded() {
        // b_1 = (2, 4) with norm sqrt(20) < 10
        let m = array![[0.0, 0.0], [1.0, 1.0], [1.0, 3.0]];
        let p = GflProblem::new(m, 10.0, 1.0).unwrap();
        let row = update_beta_row(&p, &array![0.0, 0.0], &Array2::zeros((2, 2)), 1).unwrap();
        assert_eq!(row, array![0.0, 0.0]);
    }

    #[test]
    fn gamma_updates() {
        let m = random_target(6, 3, 1);
        let p = GflProblem::new(m.clone(), 1.0, 2.0).unwrap();
        let g = update_gamma(&p, &Array2::zeros((5, 3)));
        assert_eq!(g, m.mean_axis(Axis(0)).unwrap());

        let gamma0 = array![0.5, -1.0, 2.0];
        let beta0 = random_target(5, 3, 2);
        let exact = GflSolution {
            gamma: gamma0.clone(),
            beta: beta0.clone(),
            ..GflSolution::zeros(6, 3)
        };
        let p = GflProblem::new(exact.nu(), 1.0, 2.0).unwrap();
        let g = update_gamma(&p, &beta0);
        for j in 0..3 {
            assert!((g[j] - gamma0[j]).abs() < 1e-12);
        }

        // naive averaging of M - X beta with X built densely
        let m = random_target(5, 2, 3);
        let beta = random_target(4, 2, 4);
        let p = GflProblem::new(m.clone(), 1.0, 1.0).unwrap();
        let g = update_gamma(&p, &beta);
        for j in 0..2 {
            let mut acc = 0.0;
            for i in 0..5 {
                let mut xb = 0.0;
                for col in 0..4 {
                    if i > col {
                        xb += beta[[col, j]];
                    }
                }
                acc += m[[i, j]] - xb;
            }
            assert!((g[j] - acc / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_penalty_fuses_everything() {
        let m = random_target(7, 2, 5);
        let p = GflProblem::new(m.clone(), 1e9, 1.0).unwrap();
        let sol = solve(&p, &GflSolution::zeros(7, 2), 20, 1e-10).unwrap();
        assert!(sol.beta.iter().all(|&b| b == 0.0));
        let nu = sol.nu();
        let means = m.mean_axis(Axis(0)).unwrap();
        for row in nu.outer_iter() {
            for j in 0..2 {
                assert!((row[j] - means[j]).abs() < 1e-12);
            }
        }
        assert_eq!(kkt_residual(&p, &sol), 0.0);
    }

    #[test]
    fn zero_penalty_reproduces_target() {
        let m = random_target(6, 3, 6);
        let p = GflProblem::new(m.clone(), 0.0, 1.0).unwrap();
        let sol = solve(&p, &GflSolution::zeros(6, 3), 100_000, 1e-13).unwrap();
        let nu = sol.nu();
        for (a, b) in nu.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let exact = GflSolution::from_nu(m.view());
        assert!(kkt_residual(&p, &exact) < 1e-12);
    }

    #[test]
    fn single_jump_is_isolated() {
        let mut m = Array2::zeros((12, 2));
        for t in 6..12 {
            m[[t, 0]] = 3.0;
            m[[t, 1]] = -2.0;
        }
        let p = GflProblem::new(m, 2.0, 1.0).unwrap();
        let sol = solve(&p, &GflSolution::zeros(12, 2), 10_000, 1e-10).unwrap();
        for t in 0..11 {
            let nb = norm(sol.beta.row(t).iter());
            if t == 5 {
                assert!(nb > 1.0);
            } else {
                assert_eq!(nb, 0.0, "row {t}");
            }
        }
        assert!(sol.kkt_residual <= 1e-10);
    }

    #[test]
    fn rejects_bad_problems() {
        assert!(GflProblem::new(Array2::zeros((1, 2)), 1.0, 1.0).is_err());
        assert!(GflProblem::new(Array2::zeros((3, 2)), -1.0, 1.0).is_err());
        assert!(GflProblem::new(Array2::zeros((3, 2)), 1.0, 0.0).is_err());
        let p = GflProblem::new(Array2::zeros((3, 2)), 1.0, 1.0).unwrap();
        assert!(solve(&p, &GflSolution::zeros(4, 2), 1, 1e-6).is_err());
        assert!(solve(&p, &GflSolution::zeros(3, 2), 0, 1e-6).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn objective_never_increases(seed in 0u64..10_000, t_len in 2usize..10, lambda in 0.0f64..5.0) {
            let p = GflProblem::new(random_target(t_len, 3, seed), lambda, 1.5).unwrap();
            let init = GflSolution::zeros(t_len, 3);
            let mut prev = p.objective(&init);
            let sol = solve(&p, &init, 40, 0.0).unwrap();
            for &obj in &sol.objective_trace {
                prop_assert!(obj <= prev + 1e-12 * prev.abs().max(1.0));
                prev = obj;
            }
        }

        #[test]
        fn reconstruction_identity(seed in 0u64..10_000, t_len in 2usize..12) {
            let sol = GflSolution {
                gamma: random_target(1, 2, seed).row(0).to_owned(),
                beta: random_target(t_len - 1, 2, seed + 1),
                ..GflSolution::zeros(t_len, 2)
            };
            let nu = sol.nu();
            prop_assert_eq!(nu.row(0), sol.gamma.view());
            for t in 0..t_len - 1 {
                for j in 0..2 {
                    let diff = nu[[t + 1, j]] - nu[[t, j]];
                    prop_assert!((diff - sol.beta[[t, j]]).abs() <= 1e-12 * (1.0 + diff.abs()));
                }
            }
        }

        #[test]
        fn shift_and_scale_invariance(seed in 0u64..10_000, t_len in 3usize..9, alpha in 0.1f64..10.0) {
            let m = random_target(t_len, 2, seed);
            let base = solve(&GflProblem::new(m.clone(), 1.0, 1.0).unwrap(), &GflSolution::zeros(t_len, 2), 20_000, 1e-12).unwrap();

            let c = array![3.0, -1.5];
            let shifted = solve(&GflProblem::new(&m + &c, 1.0, 1.0).unwrap(), &GflSolution::zeros(t_len, 2), 20_000, 1e-12).unwrap();
            for j in 0..2 {
                prop_assert!((shifted.gamma[j] - base.gamma[j] - c[j]).abs() < 1e-8);
            }
            for (a, b) in shifted.beta.iter().zip(base.beta.iter()) {
                prop_assert!((a - b).abs() < 1e-8);
            }

            let scaled = solve(&GflProblem::new(m, alpha, alpha).unwrap(), &GflSolution::zeros(t_len, 2), 20_000, 1e-12 * alpha).unwrap();
            for (a, b) in scaled.nu().iter().zip(base.nu().iter()) {
                prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
