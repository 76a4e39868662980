//! Principal component regression and partial least squares.
//!
//! Both methods center `X` and `y`, build a `P x K` weight matrix whose
//! columns map centered predictors to components, and regress `y` on the
//! components. Predictions are `intercept + (x - mean) * weights * theta`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{center_columns, check_fit_inputs, check_width, column_means, lstsq_min_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ReductionMethod {
    Pcr,
    Pls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedLinearModel {
    pub method: ReductionMethod,
    /// Component weight vectors, one per component, each of length P.
    pub weights: Vec<Vec<f64>>,
    pub component_coefficients: Vec<f64>,
    pub intercept: f64,
    pub x_means: Vec<f64>,
    /// Requested K when PLS stopped early on a degenerate component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncated_from: Option<usize>,
}

impl ReducedLinearModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let p = self.x_means.len();
        DMatrix::from_fn(p, self.weights.len(), |i, k| self.weights[k][i])
    }

    /// Component scores of centered rows.
    pub fn scores(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_width(self.x_means.len(), x)?;
        let xc = center_columns(x, &DVector::from_column_slice(&self.x_means));
        Ok(xc * self.weight_matrix())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        predict_reduced(self, x)
    }
}

pub fn predict_reduced(m: &ReducedLinearModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let theta = DVector::from_column_slice(&m.component_coefficients);
    Ok((m.scores(x)? * theta).add_scalar(m.intercept))
}

/// Numerical rank of a symmetric PSD matrix from its eigenvalues.
fn psd_rank(eigenvalues: &[f64]) -> usize {
    let max = eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return 0;
    }
    let tol = max * eigenvalues.len() as f64 * 1e-13;
    eigenvalues.iter().filter(|&&e| e > tol).count()
}

fn orient(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|c| *c = -*c);
        }
    }
}

pub fn pcr_fit(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<ReducedLinearModel> {
    check_fit_inputs(x, y)?;
    if k == 0 {
        return Err(Error::InvalidInput("PCR needs at least one component".into()));
    }
    let n = x.nrows() as f64;
    let xm = column_means(x);
    let ym = y.mean();
    let xc = center_columns(x, &xm);
    let cov = xc.transpose() * &xc / n;
    let eig = SymmetricEigen::new(cov);
    let rank = psd_rank(eig.eigenvalues.as_slice());
    if k > rank {
        return Err(Error::RankExceeded { requested: k, rank });
    }
    let mut order: Vec<(f64, Vec<f64>)> = (0..eig.eigenvalues.len())
        .map(|i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            orient(&mut v);
            (eig.eigenvalues[i], v)
        })
        .collect();
    // Descending eigenvalue; equal eigenvalues ordered by their oriented vectors.
    order.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| {
            b.1.iter()
                .zip(&a.1)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let weights: Vec<Vec<f64>> = order.into_iter().take(k).map(|(_, v)| v).collect();
    let omega = DMatrix::from_fn(x.ncols(), k, |i, c| weights[c][i]);
    let scores = &xc * omega;
    let (theta, _) = lstsq_min_norm(&scores, &y.add_scalar(-ym));
    Ok(ReducedLinearModel {
        method: ReductionMethod::Pcr,
        weights,
        component_coefficients: theta.iter().copied().collect(),
        intercept: ym,
        x_means: xm.iter().copied().collect(),
        truncated_from: None,
    })
}

/// Univariate OLS slope of `y` on each (centered) column; zero for
/// constant columns.
pub fn univariate_slopes(xc: &DMatrix<f64>, yc: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        xc.ncols(),
        xc.column_iter().map(|c| {
            let ss = c.norm_squared();
            if ss > 0.0 {
                c.dot(yc) / ss
            } else {
                0.0
            }
        }),
    )
}

/// Iterative PLS: each component aggregates the current predictors with
/// weights proportional to their univariate slopes on the current target
/// (normalized to unit length), after which target and predictors are
/// orthogonalized against the component.
pub fn pls_fit(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<ReducedLinearModel> {
    check_fit_inputs(x, y)?;
    if k == 0 {
        return Err(Error::InvalidInput("PLS needs at least one component".into()));
    }
    let p = x.ncols();
    let xm = column_means(x);
    let ym = y.mean();
    let xc = center_columns(x, &xm);
    let yc0 = y.add_scalar(-ym);
    let scale = xc.norm() * yc0.norm();

    let mut xk = xc.clone();
    let mut yk = yc0.clone();
    // Maps original centered predictors to the current deflated ones.
    let mut basis = DMatrix::<f64>::identity(p, p);
    let mut weights: Vec<Vec<f64>> = Vec::new();
    for _ in 0..k {
        if (xk.transpose() * &yk).norm() <= 1e-12 * scale {
            break;
        }
        let phi = univariate_slopes(&xk, &yk);
        let norm = phi.norm();
        if !(norm > 0.0) {
            break;
        }
        let w = phi / norm;
        let comp = &xk * &w;
        let cc = comp.norm_squared();
        if cc <= 1e-24 * xc.norm_squared().max(f64::MIN_POSITIVE) {
            break;
        }
        weights.push((&basis * &w).iter().copied().collect());
        let loadings = xk.transpose() * &comp / cc;
        xk -= &comp * loadings.transpose();
        yk -= &comp * (comp.dot(&yk) / cc);
        basis = &basis * (DMatrix::identity(p, p) - &w * loadings.transpose());
    }
    if weights.is_empty() {
        return Err(Error::DegenerateComponent);
    }
    let truncated_from = (weights.len() < k).then_some(k);
    if truncated_from.is_some() {
        log::warn!("PLS stopped after {} of {k} components", weights.len());
    }
    let omega = DMatrix::from_fn(p, weights.len(), |i, c| weights[c][i]);
    let (theta, _) = lstsq_min_norm(&(&xc * omega), &yc0);
    Ok(ReducedLinearModel {
        method: ReductionMethod::Pls,
        weights,
        component_coefficients: theta.iter().copied().collect(),
        intercept: ym,
        x_means: xm.iter().copied().collect(),
        truncated_from,
    })
}
