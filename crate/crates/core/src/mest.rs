//! Regression M-estimation and the original (non-bootstrap) pivots.
//!
//! The estimator β̄ₙ solves Σ xᵢ ψ(yᵢ − xᵢ′β) = 0. It is found by damped Newton
//! iteration started at the least-squares solution; the same solver, with
//! per-observation weights, produces the perturbation bootstrap replicates.
//!
//! Alongside β̄ₙ the fit carries every studentization ingredient:
//!
//! ```text
//! τₙ  = n⁻¹ Σ ψ′(ε̄ᵢ)              sₙ² = n⁻¹ Σ ψ²(ε̄ᵢ)        σ̂ₙ = sₙ / τₙ
//! Aₙ  = n⁻¹ Σ xᵢxᵢ′               Ā₁ₙ = n⁻¹ Σ xᵢxᵢ′ ψ′(ε̄ᵢ)
//! Ā₂ₙ = n⁻¹ Σ xᵢxᵢ′ ψ²(ε̄ᵢ)        Σ̄ₙ^(−1/2) = Ā₂ₙ^(−1/2) Ā₁ₙ
//! ```

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, LinalgError};
use crate::score::ScoreFunction;

/// Relative singular-value floor for the design rank check.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("need n > p >= 1, got n = {n}, p = {p}")]
    TooFewObservations { n: usize, p: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("design is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MestError {
    #[error(transparent)]
    Data(#[from] DataError),

    #[error("design matrix is singular")]
    SingularDesign,

    #[error("Newton iteration did not converge after {iterations} iterations (equation norm {eq_norm:.3e})")]
    NonConvergence {
        best: DVector<f64>,
        eq_norm: f64,
        iterations: usize,
    },

    #[error("degenerate studentization: {0}")]
    DegenerateStudentization(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Design matrix X (n×p, row i = xᵢ′) and responses y.
#[derive(Debug, Clone)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    // row-major copy of X for the O(n) hot loops
    rows: Vec<f64>,
}

impl RegressionData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self, DataError> {
        let (n, p) = x.shape();
        if p == 0 || n <= p {
            return Err(DataError::TooFewObservations { n, p });
        }
        if y.len() != n {
            return Err(DataError::DimensionMismatch(format!(
                "X has {n} rows but y has {} entries",
                y.len()
            )));
        }
        for i in 0..n {
            for j in 0..p {
                if !x[(i, j)].is_finite() {
                    return Err(DataError::NonFinite { row: i, col: j });
                }
            }
            if !y[i].is_finite() {
                return Err(DataError::NonFinite { row: i, col: p });
            }
        }
        let sv = x.clone().singular_values();
        let (smin, smax) = (sv.min(), sv.max());
        if !(smax > 0.0) || smin <= RANK_TOL * smax {
            return Err(DataError::RankDeficient {
                ratio: if smax > 0.0 { smin / smax } else { 0.0 },
            });
        }
        let rows = row_major(&x);
        Ok(Self { x, y, rows })
    }

    /// Same (already validated) design with a new response vector.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self, DataError> {
        if y.len() != self.n() {
            return Err(DataError::DimensionMismatch(format!(
                "expected {} responses, got {}",
                self.n(),
                y.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row: i, col: self.p() });
        }
        Ok(Self {
            x: self.x.clone(),
            y,
            rows: self.rows.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.rows[i * p..(i + 1) * p]
    }

    /// xᵢ′β for every row.
    pub fn fitted(&self, beta: &DVector<f64>) -> Vec<f64> {
        (0..self.n()).map(|i| dot(self.row(i), beta.as_slice())).collect()
    }

    /// yᵢ − xᵢ′β for every row.
    pub fn residuals(&self, beta: &DVector<f64>) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.y[i] - dot(self.row(i), beta.as_slice()))
            .collect()
    }

    /// True when X is a single column of ones.
    pub fn is_location_design(&self) -> bool {
        self.p() == 1 && self.x.iter().all(|&v| v == 1.0)
    }
}

fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut rows = Vec::with_capacity(n * p);
    for i in 0..n {
        for j in 0..p {
            rows.push(x[(i, j)]);
        }
    }
    rows
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// n⁻¹ Σ xᵢxᵢ′ cᵢ.
pub(crate) fn weighted_gram(data: &RegressionData, coef: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let p = data.p();
    let mut g = DMatrix::zeros(p, p);
    for i in 0..data.n() {
        let c = coef(i);
        if c == 0.0 {
            continue;
        }
        let xi = data.row(i);
        for a in 0..p {
            let ca = c * xi[a];
            for b in a..p {
                g[(a, b)] += ca * xi[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g / data.n() as f64
}

/// n⁻¹ Σ xᵢ vᵢ.
pub(crate) fn weighted_cross(data: &RegressionData, v: impl Fn(usize) -> f64) -> DVector<f64> {
    let p = data.p();
    let mut out = DVector::zeros(p);
    for i in 0..data.n() {
        let c = v(i);
        let xi = data.row(i);
        for a in 0..p {
            out[a] += c * xi[a];
        }
    }
    out / data.n() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence when ‖n⁻¹Σxᵢψ(rᵢ)wᵢ‖ ≤ tol_factor · scale.
    pub tol_factor: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// Return an unconverged fit (flagged) instead of an error.
    pub allow_unconverged: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_factor: 1e-10,
            max_iter: 50,
            max_halvings: 30,
            allow_unconverged: false,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub beta: DVector<f64>,
    pub eq_norm: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonFailureKind {
    SingularJacobian,
    Stalled,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonFailure {
    pub kind: NewtonFailureKind,
    pub best: DVector<f64>,
    pub eq_norm: f64,
    pub iterations: usize,
}

/// Estimating-equation value n⁻¹ Σ xᵢ ψ(rᵢ) wᵢ at β.
fn equation(
    data: &RegressionData,
    score: &ScoreFunction,
    weights: Option<&[f64]>,
    beta: &DVector<f64>,
) -> DVector<f64> {
    let b = beta.as_slice();
    weighted_cross(data, |i| {
        let r = data.y[i] - dot(data.row(i), b);
        score.eval(r) * weights.map_or(1.0, |w| w[i])
    })
}

/// Damped Newton on the (optionally weighted) estimating equation.
///
/// `wander` bounds ‖β − center‖ during the iteration; leaving that ball is
/// reported as divergence.
pub(crate) fn newton_solve(
    data: &RegressionData,
    score: &ScoreFunction,
    weights: Option<&[f64]>,
    init: DVector<f64>,
    opts: &SolverOptions,
    wander: Option<(&DVector<f64>, f64)>,
) -> Result<NewtonOutcome, NewtonFailure> {
    let mut beta = init;
    let mut g = equation(data, score, weights, &beta);
    let mut g_norm = g.norm();

    let scale = {
        let b = beta.as_slice();
        let s: f64 = (0..data.n())
            .map(|i| {
                let r = data.y[i] - dot(data.row(i), b);
                let xi_norm = data.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                xi_norm * score.eval(r).abs() * weights.map_or(1.0, |w| w[i])
            })
            .sum();
        (s / data.n() as f64).max(1.0)
    };
    let tol = opts.tol_factor * scale;
    // round-off floor accepted when no further decrease is possible
    let floor = 1e-8 * scale;

    let fail = |kind, best: DVector<f64>, eq_norm, iterations| NewtonFailure {
        kind,
        best,
        eq_norm,
        iterations,
    };

    for iter in 0..opts.max_iter {
        if g_norm <= tol {
            return Ok(NewtonOutcome { beta, eq_norm: g_norm, iterations: iter });
        }
        let b = beta.as_slice();
        let jac = weighted_gram(data, |i| {
            let r = data.y[i] - dot(data.row(i), b);
            score.deriv1(r) * weights.map_or(1.0, |w| w[i])
        });
        let step = match linalg::solve_sym(&jac, &g) {
            Ok(s) => s,
            Err(_) => return Err(fail(NewtonFailureKind::SingularJacobian, beta, g_norm, iter)),
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &beta + &step * t;
            let g_c = equation(data, score, weights, &cand);
            let n_c = g_c.norm();
            if n_c.is_finite() && n_c < g_norm {
                accepted = Some((cand, g_c, n_c));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, g_c, n_c)) => {
                beta = cand;
                g = g_c;
                g_norm = n_c;
                if let Some((center, radius)) = wander {
                    if (&beta - center).norm() > radius {
                        return Err(fail(NewtonFailureKind::Diverged, beta, g_norm, iter + 1));
                    }
                }
            }
            None => {
                if g_norm <= floor {
                    return Ok(NewtonOutcome { beta, eq_norm: g_norm, iterations: iter });
                }
                return Err(fail(NewtonFailureKind::Stalled, beta, g_norm, iter));
            }
        }
    }
    if g_norm <= tol {
        Ok(NewtonOutcome { beta, eq_norm: g_norm, iterations: opts.max_iter })
    } else {
        Err(fail(NewtonFailureKind::MaxIterations, beta, g_norm, opts.max_iter))
    }
}

/// Least-squares solution (X′WX)⁻¹X′Wy with optional non-negative weights.
pub(crate) fn weighted_least_squares(
    data: &RegressionData,
    weights: Option<&[f64]>,
) -> Result<DVector<f64>, LinalgError> {
    let gram = weighted_gram(data, |i| weights.map_or(1.0, |w| w[i]));
    let rhs = weighted_cross(data, |i| data.y[i] * weights.map_or(1.0, |w| w[i]));
    linalg::solve_sym(&gram, &rhs)
}

/// A fitted M-estimate with all studentization quantities.
#[derive(Debug, Clone)]
pub struct MFit {
    pub beta_bar: DVector<f64>,
    pub residuals: DVector<f64>,
    pub tau_n: f64,
    pub s_n2: f64,
    pub sigma_hat: f64,
    pub a_n: DMatrix<f64>,
    pub a_n_half: DMatrix<f64>,
    pub a1_bar: DMatrix<f64>,
    pub a2_bar: DMatrix<f64>,
    /// Σ̄ₙ^(−1/2) = Ā₂ₙ^(−1/2)Ā₁ₙ; `None` when Ā₂ₙ or Ā₁ₙ is degenerate.
    pub sigma_half_inv: Option<DMatrix<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub eq_norm: f64,
    pub score: ScoreFunction,
    /// n⁻¹ Σ xᵢ.
    pub column_means: DVector<f64>,
    /// First column of X is identically one.
    pub has_intercept: bool,
}

/// JSON view of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub score: String,
    pub tuning: f64,
    pub n: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    pub sigma_hat: f64,
    pub tau_n: f64,
    pub s_n2: f64,
    pub eq_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub degenerate: bool,
}

impl MFit {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    pub fn p(&self) -> usize {
        self.beta_bar.len()
    }

    /// X is a single column of ones.
    pub fn is_location_model(&self) -> bool {
        self.p() == 1 && self.has_intercept
    }

    /// sₙ² = 0 (exact fit) or a singular sandwich ingredient.
    pub fn is_degenerate(&self) -> bool {
        !(self.s_n2 > 0.0) || self.sigma_half_inv.is_none()
    }

    pub fn studentizer(&self) -> Result<&DMatrix<f64>, MestError> {
        self.sigma_half_inv.as_ref().ok_or_else(|| {
            MestError::DegenerateStudentization(
                "Ā₂ₙ or Ā₁ₙ is singular (exact fit or vanishing scores)".into(),
            )
        })
    }

    pub fn require_sigma_hat(&self) -> Result<f64, MestError> {
        if self.s_n2 > 0.0 && self.sigma_hat > 0.0 && self.sigma_hat.is_finite() {
            Ok(self.sigma_hat)
        } else {
            Err(MestError::DegenerateStudentization(format!(
                "s_n^2 = {:.3e}, tau_n = {:.3e}",
                self.s_n2, self.tau_n
            )))
        }
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary {
            score: self.score.name().to_string(),
            tuning: self.score.tuning(),
            n: self.n(),
            p: self.p(),
            beta: self.beta_bar.iter().copied().collect(),
            sigma_hat: self.sigma_hat,
            tau_n: self.tau_n,
            s_n2: self.s_n2,
            eq_norm: self.eq_norm,
            iterations: self.iterations,
            converged: self.converged,
            degenerate: self.is_degenerate(),
        }
    }
}

/// Studentization quantities at a given β̄ₙ.
pub(crate) fn assemble_fit(
    data: &RegressionData,
    score: &ScoreFunction,
    beta_bar: DVector<f64>,
    converged: bool,
    iterations: usize,
    eq_norm: f64,
) -> Result<MFit, MestError> {
    let n = data.n() as f64;
    let resid = data.residuals(&beta_bar);
    let tau_n = resid.iter().map(|&r| score.deriv1(r)).sum::<f64>() / n;
    if !(tau_n > 0.0) {
        return Err(MestError::DegenerateStudentization(format!(
            "tau_n = {tau_n:.3e} is not positive"
        )));
    }
    let s_n2 = resid.iter().map(|&r| score.eval(r).powi(2)).sum::<f64>() / n;
    let sigma_hat = s_n2.sqrt() / tau_n;

    let a_n = weighted_gram(data, |_| 1.0);
    let a_n_half = linalg::sym_sqrt(&a_n).map_err(|_| MestError::SingularDesign)?;
    let a1_bar = weighted_gram(data, |i| score.deriv1(resid[i]));
    let a2_bar = weighted_gram(data, |i| score.eval(resid[i]).powi(2));
    let sigma_half_inv = studentizing_matrix(&a1_bar, &a2_bar).ok();
    let column_means = weighted_cross(data, |_| 1.0);
    let has_intercept = (0..data.n()).all(|i| data.row(i)[0] == 1.0);

    Ok(MFit {
        beta_bar,
        residuals: DVector::from_vec(resid),
        tau_n,
        s_n2,
        sigma_hat,
        a_n,
        a_n_half,
        a1_bar,
        a2_bar,
        sigma_half_inv,
        converged,
        iterations,
        eq_norm,
        score: score.clone(),
        column_means,
        has_intercept,
    })
}

/// A₂^(−1/2) A₁, refusing singular A₁ or A₂.
pub(crate) fn studentizing_matrix(
    a1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
) -> Result<DMatrix<f64>, MestError> {
    let a2_inv_half = linalg::sym_inv_sqrt(a2)
        .map_err(|e| MestError::DegenerateStudentization(format!("A2: {e}")))?;
    let (lo, hi) = linalg::sym_extreme_eigenvalues(a1);
    let big = lo.abs().max(hi.abs());
    let small = if lo.signum() == hi.signum() { lo.abs().min(hi.abs()) } else { 0.0 };
    if !(big > 0.0) || small <= linalg::EIGEN_REL_FLOOR * big {
        return Err(MestError::DegenerateStudentization("A1 is singular".into()));
    }
    Ok(a2_inv_half * a1)
}

/// Solve Σ xᵢ ψ(yᵢ − xᵢ′β) = 0.
pub fn m_estimate(
    data: &RegressionData,
    score: &ScoreFunction,
    opts: &SolverOptions,
) -> Result<MFit, MestError> {
    let init = weighted_least_squares(data, None).map_err(|_| MestError::SingularDesign)?;
    match newton_solve(data, score, None, init, opts, None) {
        Ok(out) => assemble_fit(data, score, out.beta, true, out.iterations, out.eq_norm),
        Err(f) if f.kind == NewtonFailureKind::SingularJacobian && score.is_least_squares() => {
            Err(MestError::SingularDesign)
        }
        Err(f) if opts.allow_unconverged => {
            assemble_fit(data, score, f.best, false, f.iterations, f.eq_norm)
        }
        Err(f) => Err(MestError::NonConvergence {
            best: f.best,
            eq_norm: f.eq_norm,
            iterations: f.iterations,
        }),
    }
}

fn check_dim(fit: &MFit, beta_true: &DVector<f64>) -> Result<(), MestError> {
    if beta_true.len() != fit.p() {
        return Err(MestError::Data(DataError::DimensionMismatch(format!(
            "beta has {} entries, model has p = {}",
            beta_true.len(),
            fit.p()
        ))));
    }
    Ok(())
}

/// Fₙ = √n σ⁻¹ Aₙ^(1/2) (β̄ₙ − β) with the true σ.
pub fn pivot_original_standardized(
    fit: &MFit,
    beta_true: &DVector<f64>,
    sigma_true: f64,
) -> Result<DVector<f64>, MestError> {
    check_dim(fit, beta_true)?;
    if !(sigma_true > 0.0) {
        return Err(MestError::InvalidParameter(format!(
            "sigma must be positive, got {sigma_true}"
        )));
    }
    let root_n = (fit.n() as f64).sqrt();
    Ok(&fit.a_n_half * (&fit.beta_bar - beta_true) * (root_n / sigma_true))
}

/// Hₙ = √n σ̂ₙ⁻¹ Aₙ^(1/2) (β̄ₙ − β).
pub fn pivot_original_studentized(
    fit: &MFit,
    beta_true: &DVector<f64>,
) -> Result<DVector<f64>, MestError> {
    check_dim(fit, beta_true)?;
    let sigma_hat = fit.require_sigma_hat()?;
    let root_n = (fit.n() as f64).sqrt();
    Ok(&fit.a_n_half * (&fit.beta_bar - beta_true) * (root_n / sigma_hat))
}

/// H̆ₙ = √n Ā₂ₙ^(−1/2) Ā₁ₙ (β̄ₙ − β), robust to heteroscedastic errors.
pub fn pivot_original_hetero(
    fit: &MFit,
    beta_true: &DVector<f64>,
) -> Result<DVector<f64>, MestError> {
    check_dim(fit, beta_true)?;
    let m = fit.studentizer()?;
    let root_n = (fit.n() as f64).sqrt();
    Ok(m * (&fit.beta_bar - beta_true) * root_n)
}
