//! Small dense linear-algebra helpers shared by the linear and
//! dimension-reduction models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

pub fn center_columns(x: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Minimum-norm least squares through the SVD. Returns the solution and the
/// numerical rank of `x`.
pub fn lstsq_min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, usize) {
    if x.ncols() == 0 {
        return (DVector::zeros(0), 0);
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = smax * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    let uty = u.transpose() * y;
    let mut coef = DVector::zeros(x.ncols());
    let mut rank = 0;
    for k in 0..s.len() {
        if s[k] > cutoff {
            rank += 1;
            coef += v_t.row(k).transpose() * (uty[k] / s[k]);
        }
    }
    (coef, rank)
}

pub fn check_finite(x: &DMatrix<f64>) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

pub fn check_fit_inputs(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but target has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    check_finite(x)?;
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row: i, col: x.ncols() });
    }
    Ok(())
}

pub fn check_width(expected: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            found: x.ncols(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_norm_on_duplicated_column() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let (b, rank) = lstsq_min_norm(&x, &y);
        assert_eq!(rank, 1);
        assert!((b[0] - 1.0).abs() < 1e-12 && (b[1] - 1.0).abs() < 1e-12);
    }
}
