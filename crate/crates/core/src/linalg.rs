//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn lambda_max(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// Applies `f` to the spectrum of a symmetric matrix.
fn spectral_map(m: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = Mat::from_diagonal(&eig.eigenvalues.map(f));
    symmetrize(&(&eig.eigenvectors * d * eig.eigenvectors.transpose()))
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn psd_sqrt(m: &Mat) -> Result<Mat> {
    let lo = lambda_min(m);
    if lo < -1e-12 * (1.0 + m.amax()) {
        return Err(Error::Parameter(format!(
            "matrix is not positive semidefinite (min eigenvalue {lo:e})"
        )));
    }
    Ok(spectral_map(m, |v| v.max(0.0).sqrt()))
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn pd_inv_sqrt(m: &Mat) -> Result<Mat> {
    if lambda_min(m) <= 0.0 {
        return Err(Error::Parameter("matrix is not positive definite".into()));
    }
    Ok(spectral_map(m, |v| 1.0 / v.sqrt()))
}

/// Inverse of a symmetric positive definite matrix, symmetrized.
pub fn pd_inverse(m: &Mat) -> Result<Mat> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Parameter("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Builds a matrix from a list of rows. An empty list yields a `0 × 0` matrix.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}
