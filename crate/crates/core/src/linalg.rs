//! Small dense linear-algebra helpers built on `nalgebra`.
//!
//! Everything here works on symmetric p×p matrices with p small (a handful of
//! regression coefficients), so clarity wins over blocking or in-place tricks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Eigenvalues at or below this fraction of the largest one are treated as zero.
pub const EIGEN_REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (min eigenvalue {min:.3e}, max eigenvalue {max:.3e})")]
    NotPositiveDefinite { min: f64, max: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("matrix contains non-finite entries")]
    NonFinite,
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetric matrix power `A^power` through the spectral decomposition.
///
/// Fails rather than clamping when the smallest eigenvalue is at or below
/// `EIGEN_REL_FLOOR · max eigenvalue`.
pub fn sym_pow(a: &DMatrix<f64>, power: f64) -> Result<DMatrix<f64>, LinalgError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= EIGEN_REL_FLOOR * max {
        return Err(LinalgError::NotPositiveDefinite { min, max });
    }
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.powf(power)),
    );
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&scaled) * v.transpose())
}

/// Symmetric positive-definite square root.
pub fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    sym_pow(a, 0.5)
}

/// Symmetric inverse square root `A^(-1/2)`.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    sym_pow(a, -0.5)
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn sym_extreme_eigenvalues(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(a));
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// Solve `A x = b` for symmetric `A`, Cholesky first with an LU fallback for
/// indefinite systems.
pub fn solve_sym(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let x = a.clone().lu().solve(b).ok_or(LinalgError::Singular)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(LinalgError::Singular)
    }
}

/// General square inverse.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    a.clone().try_inverse().ok_or(LinalgError::Singular)
}
