//! Ordinary least squares and the penalized linear regressions.
//!
//! Every fit minimizes the pooled objective
//! `(1/n) * sum (y - b0 - x'b)^2 + l1 * sum |b_j| + l2 * sum b_j^2`
//! with an unpenalized intercept. Inputs are expected to be standardized
//! upstream; nothing is rescaled here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, check_fit_inputs, check_width, column_means, lstsq_min_norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Penalty {
    None,
    L1 { lambda: f64 },
    L2 { lambda: f64 },
    Elastic { lambda1: f64, lambda2: f64 },
}

impl Penalty {
    fn weights(&self) -> (f64, f64) {
        match *self {
            Penalty::None => (0.0, 0.0),
            Penalty::L1 { lambda } => (lambda, 0.0),
            Penalty::L2 { lambda } => (0.0, lambda),
            Penalty::Elastic { lambda1, lambda2 } => (lambda1, lambda2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub sweeps: usize,
    pub max_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub penalty: Penalty,
    #[serde(default)]
    pub convergence: Option<Convergence>,
    /// Set when OLS fell back to the minimum-norm solution.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl LinearModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        predict_linear(self, x)
    }

    /// Value of this model's own penalized objective on `(x, y)`.
    pub fn objective(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let (l1, l2) = self.penalty.weights();
        objective(self, x, y, l1, l2)
    }
}

/// `(1/n) * RSS + l1 * |b|_1 + l2 * |b|_2^2` for any linear model.
pub fn objective(m: &LinearModel, x: &DMatrix<f64>, y: &DVector<f64>, l1: f64, l2: f64) -> Result<f64> {
    let r = y - predict_linear(m, x)?;
    let n = y.len() as f64;
    Ok(r.norm_squared() / n
        + l1 * m.coefficients.iter().map(|b| b.abs()).sum::<f64>()
        + l2 * m.coefficients.iter().map(|b| b * b).sum::<f64>())
}

/// Coordinate-descent stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdOptions {
    /// Converged when the largest coefficient change in a sweep is below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        CdOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

pub fn ols_fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel> {
    check_fit_inputs(x, y)?;
    if x.nrows() < x.ncols() + 1 {
        return Err(Error::InvalidInput(format!(
            "OLS needs at least {} rows, got {}",
            x.ncols() + 1,
            x.nrows()
        )));
    }
    let xm = column_means(x);
    let ym = y.mean();
    let xc = center_columns(x, &xm);
    let yc = y.add_scalar(-ym);
    let (beta, rank) = lstsq_min_norm(&xc, &yc);
    let rank_deficient = rank < x.ncols();
    if rank_deficient {
        log::warn!("OLS design has rank {rank} < {} columns; using minimum-norm solution", x.ncols());
    }
    Ok(LinearModel {
        intercept: ym - xm.dot(&beta),
        coefficients: beta.iter().copied().collect(),
        penalty: Penalty::None,
        convergence: None,
        rank_deficient,
    })
}

/// Closed-form ridge on centered data through the SVD:
/// `b = V diag(s / (s^2 + n*lambda)) U'y`.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        let mut m = ols_fit(x, y)?;
        m.penalty = Penalty::L2 { lambda };
        return Ok(m);
    }
    check_fit_inputs(x, y)?;
    let n = x.nrows() as f64;
    let xm = column_means(x);
    let ym = y.mean();
    let xc = center_columns(x, &xm);
    let yc = y.add_scalar(-ym);
    let svd = xc.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let uty = u.transpose() * &yc;
    let mut beta = DVector::zeros(x.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        let shrink = s / (s * s + n * lambda);
        beta += v_t.row(k).transpose() * (uty[k] * shrink);
    }
    Ok(LinearModel {
        intercept: ym - xm.dot(&beta),
        coefficients: beta.iter().copied().collect(),
        penalty: Penalty::L2 { lambda },
        convergence: None,
        rank_deficient: false,
    })
}

pub fn lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<LinearModel> {
    lasso_fit_with(x, y, lambda, &CdOptions::default())
}

pub fn lasso_fit_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &CdOptions,
) -> Result<LinearModel> {
    let mut m = enet_fit_with(x, y, lambda, 0.0, opts)?;
    m.penalty = Penalty::L1 { lambda };
    Ok(m)
}

pub fn enet_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda1: f64, lambda2: f64) -> Result<LinearModel> {
    enet_fit_with(x, y, lambda1, lambda2, &CdOptions::default())
}

pub fn enet_fit_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
    opts: &CdOptions,
) -> Result<LinearModel> {
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
        }
    }
    check_fit_inputs(x, y)?;
    let xm = column_means(x);
    let ym = y.mean();
    let xc = center_columns(x, &xm);
    let yc = y.add_scalar(-ym);
    let (beta, conv) = coordinate_descent(&xc, &yc, lambda1, lambda2, opts, None)?;
    Ok(LinearModel {
        intercept: ym - xm.dot(&beta),
        coefficients: beta.iter().copied().collect(),
        penalty: Penalty::Elastic { lambda1, lambda2 },
        convergence: Some(conv),
        rank_deficient: false,
    })
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on centered data. Each coordinate solves
/// `min_b a*b^2 - 2*c*b + l1*|b| + l2*b^2` exactly, giving
/// `b = S(c, l1/2) / (a + l2)` with `a = |x_j|^2/n` and `c = x_j'r_j/n`.
pub(crate) fn coordinate_descent(
    xc: &DMatrix<f64>,
    yc: &DVector<f64>,
    l1: f64,
    l2: f64,
    opts: &CdOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<(DVector<f64>, Convergence)> {
    let n = xc.nrows() as f64;
    let p = xc.ncols();
    let sq: Vec<f64> = xc.column_iter().map(|c| c.norm_squared() / n).collect();
    let mut beta = DVector::zeros(p);
    let mut resid = yc.clone();
    let mut max_change = f64::INFINITY;
    for sweep in 1..=opts.max_iter {
        max_change = 0.0_f64;
        for j in 0..p {
            if sq[j] == 0.0 {
                continue;
            }
            let col = xc.column(j);
            let old: f64 = beta[j];
            let c = col.dot(&resid) / n + sq[j] * old;
            let new = soft_threshold(c, l1 / 2.0) / (sq[j] + l2);
            let delta = new - old;
            if delta != 0.0 {
                resid.axpy(-delta, &col, 1.0);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(
                resid.norm_squared() / n
                    + l1 * beta.iter().map(|b: &f64| b.abs()).sum::<f64>()
                    + l2 * beta.norm_squared(),
            );
        }
        if max_change < opts.tol {
            return Ok((
                beta,
                Convergence {
                    sweeps: sweep,
                    max_change,
                },
            ));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        max_change,
        coefficients: beta.iter().copied().collect(),
    })
}

/// Smallest L1 weight at which every lasso coefficient is zero:
/// `(2/n) * max_j |x_j'(y - mean(y))|` on centered columns.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows() as f64;
    let xc = center_columns(x, &column_means(x));
    let yc = y.add_scalar(-y.mean());
    xc.column_iter()
        .map(|c| (2.0 / n * c.dot(&yc)).abs())
        .fold(0.0, f64::max)
}

pub fn predict_linear(m: &LinearModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_width(m.coefficients.len(), x)?;
    let beta = DVector::from_column_slice(&m.coefficients);
    Ok((x * beta).add_scalar(m.intercept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta: Vec<f64> = (0..p).map(|j| (j as f64 - p as f64 / 2.0) * 0.3).collect();
        let y = DVector::from_fn(n, |i, _| {
            0.7 + (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        (x, y)
    }

    /// Normal equations on the intercept-augmented design.
    fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let xa = DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        (xa.transpose() * &xa).try_inverse().unwrap() * xa.transpose() * y
    }

    #[test]
    fn ols_exact_line() {
        let x = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0, 8.0]);
        let m = ols_fit(&x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!(m.intercept.abs() < 1e-12);
    }

    #[test]
    fn ols_matches_normal_equations_and_residuals_orthogonal() {
        let (x, y) = random_problem(50, 5, 3);
        let m = ols_fit(&x, &y).unwrap();
        let oracle = normal_equations(&x, &y);
        assert!((m.intercept - oracle[0]).abs() < 1e-8);
        for j in 0..5 {
            assert!((m.coefficients[j] - oracle[j + 1]).abs() < 1e-8);
        }
        let r = &y - predict_linear(&m, &x).unwrap();
        for c in x.column_iter() {
            assert!(c.dot(&r).abs() < 1e-8);
        }
        assert!(r.sum().abs() < 1e-8);
    }

    #[test]
    fn ols_no_signal() {
        let (x, _) = random_problem(400, 3, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DVector::from_fn(400, |_, _| 0.3 + 0.01 * rng.sample::<f64, _>(StandardNormal));
        let m = ols_fit(&x, &y).unwrap();
        assert!((m.intercept - y.mean()).abs() < 1e-2);
        assert!(m.coefficients.iter().all(|b| b.abs() < 5e-3));
    }

    #[test]
    fn ols_rank_deficient_flags_model() {
        let (x1, y) = random_problem(30, 2, 2);
        let x = DMatrix::from_fn(30, 3, |i, j| if j < 2 { x1[(i, j)] } else { x1[(i, 0)] });
        let m = ols_fit(&x, &y).unwrap();
        assert!(m.rank_deficient);
        assert!((m.coefficients[0] - m.coefficients[2]).abs() < 1e-8);
        assert!(ols_fit(&DMatrix::zeros(2, 2), &DVector::zeros(2)).is_err());
    }

    #[test]
    fn ridge_limits() {
        let (x, y) = random_problem(60, 4, 4);
        let r0 = ridge_fit(&x, &y, 0.0).unwrap();
        let ols = ols_fit(&x, &y).unwrap();
        assert_eq!(r0.coefficients, ols.coefficients);
        let big = ridge_fit(&x, &y, 1e9).unwrap();
        let norm: f64 = big.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(norm < 1e-3);
        assert!((big.intercept - y.mean()).abs() < 1e-2);
        assert!(ridge_fit(&x, &y, -1.0).is_err());
    }

    #[test]
    fn ridge_shrinkage_is_monotone() {
        let (x, y) = random_problem(40, 6, 9);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let m = ridge_fit(&x, &y, lambda).unwrap();
            let norm = m.coefficients.iter().map(|b| b * b).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-12);
            last = norm;
        }
    }

    #[test]
    fn lasso_zero_penalty_is_ols() {
        let (x, y) = random_problem(50, 5, 8);
        let l = lasso_fit(&x, &y, 0.0).unwrap();
        let o = ols_fit(&x, &y).unwrap();
        for j in 0..5 {
            assert!((l.coefficients[j] - o.coefficients[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn lasso_above_lambda_max_is_all_zero() {
        let (x, y) = random_problem(50, 5, 12);
        let lmax = lasso_lambda_max(&x, &y);
        let m = lasso_fit(&x, &y, lmax * 1.0001).unwrap();
        assert!(m.coefficients.iter().all(|b| *b == 0.0));
        assert!((m.intercept - y.mean()).abs() < 1e-12);
        let below = lasso_fit(&x, &y, lmax * 0.99).unwrap();
        assert!(below.coefficients.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn lasso_orthonormal_soft_threshold() {
        // Columns orthonormal and centered (sum to zero).
        let x = DMatrix::from_row_slice(4, 2, &[0.5, 0.5, 0.5, -0.5, -0.5, 0.5, -0.5, -0.5]);
        let y = DVector::from_vec(vec![3.0, 1.0, 0.5, -2.0]);
        let n = 4.0;
        let lambda = 0.4;
        let m = lasso_fit_with(&x, &y, lambda, &CdOptions { tol: 1e-14, max_iter: 1000 }).unwrap();
        for j in 0..2 {
            let ols_j = x.column(j).dot(&y);
            let expected = soft_threshold(ols_j, n * lambda / 2.0);
            assert!((m.coefficients[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn enet_degenerate_cases() {
        let (x, y) = random_problem(40, 6, 21);
        let tight = CdOptions { tol: 1e-13, max_iter: 100_000 };
        let e = enet_fit_with(&x, &y, 0.05, 0.0, &tight).unwrap();
        let l = lasso_fit_with(&x, &y, 0.05, &tight).unwrap();
        assert_eq!(e.coefficients, l.coefficients);
        let e = enet_fit_with(&x, &y, 0.0, 0.2, &tight).unwrap();
        let r = ridge_fit(&x, &y, 0.2).unwrap();
        for j in 0..6 {
            assert!((e.coefficients[j] - r.coefficients[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn enet_beats_lasso_and_ridge_on_its_objective() {
        let (x, y) = random_problem(40, 6, 33);
        let (l1, l2) = (0.05, 0.05);
        let e = enet_fit(&x, &y, l1, l2).unwrap();
        let l = lasso_fit(&x, &y, l1).unwrap();
        let r = ridge_fit(&x, &y, l2).unwrap();
        let fe = objective(&e, &x, &y, l1, l2).unwrap();
        assert!(fe <= objective(&l, &x, &y, l1, l2).unwrap() + 1e-12);
        assert!(fe <= objective(&r, &x, &y, l1, l2).unwrap() + 1e-12);
    }

    #[test]
    fn cd_objective_non_increasing_and_kkt() {
        let (x, y) = random_problem(80, 8, 44);
        let xc = center_columns(&x, &column_means(&x));
        let yc = y.add_scalar(-y.mean());
        let mut trace = Vec::new();
        let (l1, l2) = (0.08, 0.01);
        let (beta, _) = coordinate_descent(&xc, &yc, l1, l2, &CdOptions::default(), Some(&mut trace)).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        let r = &yc - &xc * &beta;
        let n = 80.0;
        for j in 0..8 {
            let g = 2.0 / n * xc.column(j).dot(&r);
            if beta[j] == 0.0 {
                assert!(g.abs() <= l1 + 1e-6);
            } else {
                assert!((g - l1 * beta[j].signum() - 2.0 * l2 * beta[j]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn solution_path_is_continuous() {
        let (x, y) = random_problem(50, 5, 55);
        let tight = CdOptions { tol: 1e-12, max_iter: 100_000 };
        let a = lasso_fit_with(&x, &y, 0.05, &tight).unwrap();
        let b = lasso_fit_with(&x, &y, 0.05 * (1.0 + 1e-6), &tight).unwrap();
        let d: f64 = a
            .coefficients
            .iter()
            .zip(&b.coefficients)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(d <= 1e-3);
    }

    #[test]
    fn non_convergence_carries_iterate() {
        let (x, y) = random_problem(50, 5, 66);
        let err = enet_fit_with(&x, &y, 0.01, 0.0, &CdOptions { tol: 0.0, max_iter: 3 }).unwrap_err();
        match err {
            Error::NonConvergence { iterations, coefficients, .. } => {
                assert_eq!(iterations, 3);
                assert_eq!(coefficients.len(), 5);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn predict_shapes() {
        let m = LinearModel {
            intercept: 0.25,
            coefficients: vec![0.0, 0.0],
            penalty: Penalty::None,
            convergence: None,
            rank_deficient: false,
        };
        let x = DMatrix::from_element(3, 2, 7.0);
        assert!(predict_linear(&m, &x).unwrap().iter().all(|v| *v == 0.25));
        assert!(predict_linear(&m, &DMatrix::zeros(3, 3)).is_err());
        let id = LinearModel { intercept: 0.0, coefficients: vec![1.0], ..m };
        let col = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 3.5]);
        assert_eq!(predict_linear(&id, &col).unwrap().as_slice(), &[1.0, -2.0, 3.5]);
    }
}
