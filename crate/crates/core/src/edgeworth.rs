//! One-term Edgeworth expansions in one dimension.
//!
//! The signed density is
//!
//! ```text
//! ξ(x) = [1 − n^(−1/2) (b₁₁ D + (b₃₁/6) D³)] φ(x)
//!      = φ(x) [1 + n^(−1/2) (b₁₁ H₁(x) + (b₃₁/6) H₃(x))]
//! ```
//!
//! with Hermite polynomials fixed by (−D)ᵏφ = Hₖφ, so H₁(x) = x,
//! H₂(x) = x² − 1 and H₃(x) = x³ − 3x. Its antiderivative is
//! Φ(x) − n^(−1/2) φ(x) [b₁₁ + (b₃₁/6) H₂(x)].
//!
//! Expansions are signed measures. Negative density values far in the tails
//! are returned as computed.

use serde::Serialize;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::linalg;
use crate::mest::MFit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdgeworthError {
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edgeworth1D {
    pub b11: f64,
    pub b31: f64,
    pub n: f64,
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl Edgeworth1D {
    pub fn new(b11: f64, b31: f64, n: f64) -> Result<Self, EdgeworthError> {
        if !(n >= 1.0) || !b11.is_finite() || !b31.is_finite() {
            return Err(EdgeworthError::InvalidParameter(format!(
                "need n >= 1 and finite coefficients, got n = {n}, b11 = {b11}, b31 = {b31}"
            )));
        }
        Ok(Self { b11, b31, n })
    }

    pub fn density(&self, x: f64) -> f64 {
        let h1 = x;
        let h3 = x * x * x - 3.0 * x;
        std_normal().pdf(x) * (1.0 + (self.b11 * h1 + self.b31 / 6.0 * h3) / self.n.sqrt())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 1.0;
        }
        if x == f64::NEG_INFINITY {
            return 0.0;
        }
        let nd = std_normal();
        let h2 = x * x - 1.0;
        nd.cdf(x) - nd.pdf(x) * (self.b11 + self.b31 / 6.0 * h2) / self.n.sqrt()
    }

    /// Warning text when the expansion may fail to be monotone on [−4, 4]:
    /// n < 4·max(|b₁₁|, |b₃₁|)², or a negative density anywhere on a fine grid
    /// of that interval (the size rule alone does not rule this out).
    pub fn range_warning(&self) -> Option<String> {
        let m = self.b11.abs().max(self.b31.abs());
        if self.n < 4.0 * m * m {
            return Some(format!(
                "n = {} is below 4·max(|b11|,|b31|)² = {:.3}; the expansion may be non-monotone",
                self.n,
                4.0 * m * m
            ));
        }
        let negative = (0..=800).map(|k| -4.0 + 0.01 * k as f64).find(|&x| self.density(x) < 0.0);
        negative.map(|x| format!("expansion density is negative at x = {x:.2} within [-4, 4]"))
    }
}

pub fn edgeworth_density(e: &Edgeworth1D, x: f64) -> f64 {
    e.density(x)
}

pub fn edgeworth_cdf(e: &Edgeworth1D, x: f64) -> f64 {
    e.cdf(x)
}

/// Which location-model expansion to build.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocationExpansion {
    /// Expansion of the original standardized mean with true σ and E ε³.
    Original { sigma: f64, third_moment: f64 },
    /// Naive bootstrap counterpart, evaluated from the fit's residuals with
    /// σ̂ₙ in place of σ.
    NaiveBootstrap,
}

/// Coefficients for the least-squares location model.
///
/// Original: b₁₁ = −σ⁻³Eε³/2, b₃₁ = −2σ⁻³Eε³. Naive bootstrap:
/// b₁₁* = −2σ̂⁻¹ ε̄, b₃₁* = σ̂⁻³ − 12σ̂⁻¹ ε̄ with ε̄ the residual mean.
pub fn location_model_coefficients(
    fit: &MFit,
    which: LocationExpansion,
) -> Result<Edgeworth1D, EdgeworthError> {
    if !fit.is_location_model() || !fit.score.is_least_squares() {
        return Err(EdgeworthError::UnsupportedModel(
            "location coefficients need a single all-ones column and least squares".into(),
        ));
    }
    let n = fit.n() as f64;
    match which {
        LocationExpansion::Original { sigma, third_moment } => {
            location_original_coefficients(sigma, third_moment, n)
        }
        LocationExpansion::NaiveBootstrap => {
            let s = fit.sigma_hat;
            if !(s > 0.0) {
                return Err(EdgeworthError::InvalidParameter("fit is degenerate (sigma_hat = 0)".into()));
            }
            let mean_resid = fit.residuals.mean();
            Edgeworth1D::new(-2.0 * mean_resid / s, s.powi(-3) - 12.0 * mean_resid / s, n)
        }
    }
}

/// Location coefficients from true moments alone (no fit needed).
pub fn location_original_coefficients(sigma: f64, third_moment: f64, n: f64) -> Result<Edgeworth1D, EdgeworthError> {
    if !(sigma > 0.0) {
        return Err(EdgeworthError::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let k = third_moment / sigma.powi(3);
    Edgeworth1D::new(-0.5 * k, -2.0 * k, n)
}

/// b₁₁⁽ʲ⁾ = −½ [n⁻¹ Σ e′ⱼ Aₙ^(−1/2) x̃ᵢ] γ₁ for simple regression with an
/// intercept, x̃ᵢ = (1, xᵢ)′ and j ∈ {1, 2}.
pub fn simple_regression_b11(fit: &MFit, gamma1: f64, j: usize) -> Result<f64, EdgeworthError> {
    if fit.p() != 2 || !fit.has_intercept {
        return Err(EdgeworthError::UnsupportedModel(format!(
            "simple regression needs p = 2 with an intercept column, got p = {}",
            fit.p()
        )));
    }
    if !(1..=2).contains(&j) {
        return Err(EdgeworthError::InvalidParameter(format!("coordinate must be 1 or 2, got {j}")));
    }
    let a_inv_half = linalg::sym_inv_sqrt(&fit.a_n)
        .map_err(|e| EdgeworthError::UnsupportedModel(e.to_string()))?;
    let proj = (a_inv_half * &fit.column_means)[j - 1];
    Ok(-0.5 * proj * gamma1)
}

/// Density and CDF on a grid, for tabulation.
pub fn tabulate(e: &Edgeworth1D, grid: &[f64]) -> Vec<(f64, f64, f64)> {
    grid.iter().map(|&x| (x, e.density(x), e.cdf(x))).collect()
}
