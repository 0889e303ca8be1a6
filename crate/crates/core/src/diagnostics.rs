//! Finite-sample checks of the design and score-moment conditions.
//!
//! The design quantities use dᵢ = D⁻¹xᵢ with D = (Σ xᵢxᵢ′)^(1/2), and the
//! q = p(p+1)/2 vectors zᵢ listing the upper triangle of xᵢxᵢ′ row by row.
//! z̃ᵢ = L₁zᵢ are their canonical versions with Σ z̃ᵢz̃ᵢ′ = I_r. A single design
//! cannot certify an O(n⁻¹) rate, so the headline statistic n_times_sum is
//! meant to be compared across a sweep of n.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::linalg;
use crate::rng::{self, tag};
use crate::score::ScoreFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Relative eigenvalue threshold for the rank of Σ zᵢzᵢ′.
pub const Z_RANK_TOL: f64 = 1e-10;

/// Default α in the design condition.
pub const DEFAULT_ALPHA: f64 = 0.5;

/// Row i = (xᵢ₁², xᵢ₁xᵢ₂, …, xᵢ₁xᵢₚ, xᵢ₂², …, xᵢₚ²).
pub fn build_z_vectors(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let q = p * (p + 1) / 2;
    let mut z = DMatrix::zeros(n, q);
    for i in 0..n {
        let mut c = 0;
        for a in 0..p {
            for b in a..p {
                z[(i, c)] = x[(i, a)] * x[(i, b)];
                c += 1;
            }
        }
    }
    z
}

/// Canonical z̃ᵢ = L₁zᵢ with L₁ = Λ_r^(−1/2)U_r′ from Σ zᵢzᵢ′ = UΛU′.
///
/// Returns (z̃ as n×r, L₁ as r×q).
pub fn canonical_ztilde(z: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>), DiagError> {
    if z.iter().all(|&v| v == 0.0) {
        return Err(DiagError::Degenerate("all z vectors are zero".into()));
    }
    let gram = z.transpose() * z;
    let eig = SymmetricEigen::new((&gram + gram.transpose()) * 0.5);
    let max = eig.eigenvalues.max();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > Z_RANK_TOL * max)
        .collect();
    let q = z.ncols();
    let mut l1 = DMatrix::zeros(keep.len(), q);
    for (r, &k) in keep.iter().enumerate() {
        let s = eig.eigenvalues[k].powf(-0.5);
        for c in 0..q {
            l1[(r, c)] = s * eig.eigenvectors[(c, k)];
        }
    }
    let zt = z * l1.transpose();
    Ok((zt, l1))
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignDiagnostics {
    pub n: usize,
    pub p: usize,
    pub alpha: f64,
    /// n^(α/2) (Σ ‖dᵢ‖^(6+2α))^(1/2).
    pub d_norm_sum: f64,
    /// Σ ‖z̃ᵢ‖⁴.
    pub ztilde_norm_sum: f64,
    /// n · (d_norm_sum + ztilde_norm_sum); stays bounded in n under the condition.
    pub n_times_sum: f64,
    pub rank_z: usize,
    pub q: usize,
    pub max_leverage: f64,
}

pub fn design_diagnostics(x: &DMatrix<f64>, alpha: f64) -> Result<DesignDiagnostics, DiagError> {
    if !(alpha > 0.0 && 2.0 * alpha <= 1.0) {
        return Err(DiagError::InvalidParameter(format!("need 0 < 2α ≤ 1, got α = {alpha}")));
    }
    let (n, p) = x.shape();
    let xtx = x.transpose() * x;
    let d_inv = linalg::sym_inv_sqrt(&xtx)
        .map_err(|e| DiagError::Degenerate(format!("D = (X'X)^(1/2) is singular: {e}")))?;
    let d = x * d_inv; // row i = dᵢ′ (D⁻¹ is symmetric)
    let mut sum_d = 0.0;
    let mut max_leverage: f64 = 0.0;
    for i in 0..n {
        let norm2 = d.row(i).norm_squared();
        max_leverage = max_leverage.max(norm2);
        sum_d += norm2.sqrt().powf(6.0 + 2.0 * alpha);
    }
    let nf = n as f64;
    let d_norm_sum = nf.powf(alpha / 2.0) * sum_d.sqrt();

    let z = build_z_vectors(x);
    let (zt, l1) = canonical_ztilde(&z)?;
    let ztilde_norm_sum = (0..n).map(|i| zt.row(i).norm_squared().powi(2)).sum::<f64>();
    Ok(DesignDiagnostics {
        n,
        p,
        alpha,
        d_norm_sum,
        ztilde_norm_sum,
        n_times_sum: nf * (d_norm_sum + ztilde_norm_sum),
        rank_z: l1.nrows(),
        q: z.ncols(),
        max_leverage,
    })
}

/// IID standard normal design entries (no intercept), drawn from `seed`.
pub fn example31_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, &[tag::DESIGN, n as u64, p as u64]);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(&mut r);
        }
    }
    x
}

/// max/min of a positive sequence; 1 means perfectly stable.
pub fn ratio_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiMoments {
    /// E ψ²(ε)
    pub e_psi2: f64,
    /// E ψ(ε)ψ′(ε)
    pub e_psi_psi1: f64,
    /// E ψ′(ε)
    pub e_psi1: f64,
    /// E ψ³(ε)
    pub e_psi3: f64,
}

/// 2·Eψ²·Eψψ′ − Eψ′·Eψ³. A nonzero gap means the naive studentized
/// perturbation bootstrap is not second-order correct.
pub fn thm42c_condition(m: &PsiMoments) -> f64 {
    2.0 * m.e_psi2 * m.e_psi_psi1 - m.e_psi1 * m.e_psi3
}

/// Plug-in moments from a sample of errors or residuals.
pub fn psi_moments_from_sample(score: &ScoreFunction, errors: &DVector<f64>) -> PsiMoments {
    let n = errors.len() as f64;
    let mean = |f: &dyn Fn(f64) -> f64| errors.iter().map(|&e| f(e)).sum::<f64>() / n;
    PsiMoments {
        e_psi2: mean(&|e| score.eval(e).powi(2)),
        e_psi_psi1: mean(&|e| score.eval(e) * score.deriv1(e)),
        e_psi1: mean(&|e| score.deriv1(e)),
        e_psi3: mean(&|e| score.eval(e).powi(3)),
    }
}
