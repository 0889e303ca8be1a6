//! Bootstrap engines: perturbation (random-weight) bootstrap with its four
//! pivots, plus residual and wild comparators.
//!
//! A perturbation replicate solves Σ xᵢ ψ(yᵢ − xᵢ′β) Gᵢ* = 0 for β*. The
//! replicate's pivot is one of
//!
//! ```text
//! F*  = √n Σ̄ₙ^(−1/2) (β* − β̄ₙ)
//! H*  = √n (σ̂ₙ/σₙ*) Σ̄ₙ^(−1/2) (β* − β̄ₙ)      σₙ* = sₙ*/τₙ*   (bootstrap residuals only)
//! H̃*  = √n (σ̂ₙ/σ̃ₙ*) Σ̄ₙ^(−1/2) (β* − β̄ₙ)      σ̃ₙ* = s̃ₙ*/τ̃ₙ*  (weighted by G and (G − μ)²)
//! H̆*  = √n A₂*^(−1/2) A₁* (β* − β̄ₙ)
//! ```
//!
//! Each replicate draws from its own stream keyed by (seed, replicate,
//! attempt), and results are gathered in replicate order, so a run is
//! bit-identical for any thread count. Replicates whose solve fails or whose
//! studentizer degenerates are redrawn with the next attempt index.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::mest::{
    self, dot, newton_solve, studentizing_matrix, weighted_cross, weighted_gram,
    weighted_least_squares, MFit, MestError, RegressionData, SolverOptions,
};
use crate::perturb::{WeightError, WeightScheme};
use crate::rng::{self, tag};
use crate::score::ScoreFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootError {
    #[error(transparent)]
    Mest(#[from] MestError),

    #[error(transparent)]
    Weights(#[from] WeightError),

    #[error("rejection rate {rate:.3} exceeds the hard limit ({n_rejected} of {b} replicates)")]
    ExcessiveRejection { rate: f64, n_rejected: usize, b: usize },

    #[error("the {engine} engine supports least squares only, got score `{score}`")]
    UnsupportedScore { engine: &'static str, score: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("could not build thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PivotKind {
    F,
    H,
    Htilde,
    Hbreve,
}

impl PivotKind {
    pub const ALL: [PivotKind; 4] = [PivotKind::F, PivotKind::H, PivotKind::Htilde, PivotKind::Hbreve];

    pub fn parse(s: &str) -> Result<Self, BootError> {
        match s {
            "f" => Ok(Self::F),
            "h" => Ok(Self::H),
            "htilde" => Ok(Self::Htilde),
            "hbreve" => Ok(Self::Hbreve),
            other => Err(BootError::InvalidParameter(format!(
                "unknown pivot `{other}` (expected f, h, htilde or hbreve)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::F => "f",
            Self::H => "h",
            Self::Htilde => "htilde",
            Self::Hbreve => "hbreve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Perturb,
    Residual,
    Wild,
}

impl Engine {
    pub fn parse(s: &str) -> Result<Self, BootError> {
        match s {
            "perturb" => Ok(Self::Perturb),
            "residual" => Ok(Self::Residual),
            "wild" => Ok(Self::Wild),
            other => Err(BootError::InvalidParameter(format!(
                "unknown engine `{other}` (expected perturb, residual or wild)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Perturb => "perturb",
            Self::Residual => "residual",
            Self::Wild => "wild",
        }
    }
}

/// B bootstrap pivots (rows) with the matching replicate estimates.
#[derive(Debug, Clone)]
pub struct PivotSample {
    pub kind: PivotKind,
    pub engine: Engine,
    pub pivots: DMatrix<f64>,
    pub estimates: DMatrix<f64>,
    pub n_rejected: usize,
    pub seed: u64,
    pub b_requested: usize,
    pub unreliable: bool,
}

impl PivotSample {
    pub fn rejection_rate(&self) -> f64 {
        self.n_rejected as f64 / self.b_requested as f64
    }

    /// Column j of the pivot matrix.
    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.pivots.column(j).iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootOptions {
    pub solver: SolverOptions,
    /// Worker count; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Constant in the trust radius C·√(p log n / n)·σ̂ₙ·λmin(Aₙ)^(−1/2).
    pub trust_c: f64,
    pub flag_rate: f64,
    pub fail_rate: f64,
    /// Redraws allowed for one replicate before giving up.
    pub max_attempts: u64,
}

impl Default for BootOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            threads: None,
            trust_c: 10.0,
            flag_rate: 0.01,
            fail_rate: 0.10,
            max_attempts: 1000,
        }
    }
}

/// Why a single replicate was discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    InvalidWeights,
    SingularSystem,
    NonConvergence,
    OutsideTrustRegion,
    DegenerateStudentizer,
}

/// Run `f` inside a pool of `threads` workers, or directly when `None`.
pub fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, BootError> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| BootError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Radius of the ball around β̄ₙ in which replicate solutions are accepted.
pub fn trust_radius(fit: &MFit, trust_c: f64) -> f64 {
    let n = fit.n() as f64;
    let p = fit.p() as f64;
    let (lmin, _) = linalg::sym_extreme_eigenvalues(&fit.a_n);
    trust_c * (p * n.ln().max(1.0) / n).sqrt() * fit.sigma_hat * lmin.max(f64::MIN_POSITIVE).powf(-0.5)
}

fn check_weights(weights: &[f64], n: usize) -> Result<(), Rejection> {
    if weights.len() != n || weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Rejection::InvalidWeights);
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Rejection::InvalidWeights);
    }
    Ok(())
}

fn solve_weighted(
    data: &RegressionData,
    score: &ScoreFunction,
    fit: &MFit,
    weights: &[f64],
    opts: &BootOptions,
    force_newton: bool,
) -> Result<DVector<f64>, Rejection> {
    check_weights(weights, data.n())?;
    let radius = trust_radius(fit, opts.trust_c);
    // the equation is homogeneous in the weights; unit mean keeps tolerances comparable
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    let w: Vec<f64> = weights.iter().map(|g| g / mean).collect();

    let beta = if score.is_least_squares() && !force_newton {
        weighted_least_squares(data, Some(&w)).map_err(|_| Rejection::SingularSystem)?
    } else {
        let wander = (&fit.beta_bar, 4.0 * radius);
        newton_solve(data, score, Some(&w), fit.beta_bar.clone(), &opts.solver, Some(wander))
            .map(|o| o.beta)
            .map_err(|f| match f.kind {
                mest::NewtonFailureKind::SingularJacobian => Rejection::SingularSystem,
                mest::NewtonFailureKind::Diverged => Rejection::OutsideTrustRegion,
                _ => Rejection::NonConvergence,
            })?
    };
    if !beta.iter().all(|v| v.is_finite()) {
        return Err(Rejection::SingularSystem);
    }
    if (&beta - &fit.beta_bar).norm() > radius {
        return Err(Rejection::OutsideTrustRegion);
    }
    Ok(beta)
}

/// β* solving the weighted estimating equation, started at β̄ₙ.
///
/// Least squares uses the closed form (Σxᵢxᵢ′Gᵢ)⁻¹Σxᵢyᵢ Gᵢ.
pub fn perturb_replicate(
    data: &RegressionData,
    score: &ScoreFunction,
    fit: &MFit,
    weights: &[f64],
    opts: &BootOptions,
) -> Result<DVector<f64>, Rejection> {
    solve_weighted(data, score, fit, weights, opts, false)
}

/// Same as [`perturb_replicate`] but always through damped Newton.
pub fn perturb_replicate_newton(
    data: &RegressionData,
    score: &ScoreFunction,
    fit: &MFit,
    weights: &[f64],
    opts: &BootOptions,
) -> Result<DVector<f64>, Rejection> {
    solve_weighted(data, score, fit, weights, opts, true)
}

/// Pivots of one solved replicate for each requested kind.
pub fn pivots_from_replicate(
    data: &RegressionData,
    fit: &MFit,
    beta_star: &DVector<f64>,
    weights: &[f64],
    mu: f64,
    kinds: &[PivotKind],
) -> Result<Vec<DVector<f64>>, Rejection> {
    let score = &fit.score;
    let n = data.n() as f64;
    let root_n = n.sqrt();
    let delta = beta_star - &fit.beta_bar;
    let resid = data.residuals(beta_star);
    let studentizer = fit.sigma_half_inv.as_ref().ok_or(Rejection::DegenerateStudentizer)?;
    if delta.iter().all(|&d| d == 0.0) {
        // a zero deviation is a zero pivot whatever the replicate studentizer
        return Ok(vec![DVector::zeros(delta.len()); kinds.len()]);
    }

    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let piv = match kind {
            PivotKind::F => studentizer * &delta * root_n,
            PivotKind::H => {
                let tau = resid.iter().map(|&r| score.deriv1(r)).sum::<f64>() / n;
                let s2 = resid.iter().map(|&r| score.eval(r).powi(2)).sum::<f64>() / n;
                let sigma_star = s2.sqrt() / tau;
                if !(tau > 0.0) || !(s2 > 0.0) || !sigma_star.is_finite() {
                    return Err(Rejection::DegenerateStudentizer);
                }
                studentizer * &delta * (root_n * fit.sigma_hat / sigma_star)
            }
            PivotKind::Htilde => {
                let mut tau = 0.0;
                let mut s2 = 0.0;
                for (i, &r) in resid.iter().enumerate() {
                    let g = weights[i];
                    tau += score.deriv1(r) * g;
                    s2 += score.eval(r).powi(2) * (g - mu).powi(2);
                }
                tau /= n;
                s2 /= n;
                let sigma_tilde = s2.sqrt() / tau;
                if !(tau > 0.0) || !(s2 > 0.0) || !sigma_tilde.is_finite() {
                    return Err(Rejection::DegenerateStudentizer);
                }
                studentizer * &delta * (root_n * fit.sigma_hat / sigma_tilde)
            }
            PivotKind::Hbreve => {
                let a1 = weighted_gram(data, |i| score.deriv1(resid[i]) * weights[i]);
                let a2 = weighted_gram(data, |i| score.eval(resid[i]).powi(2) * (weights[i] - mu).powi(2));
                let m = studentizing_matrix(&a1, &a2).map_err(|_| Rejection::DegenerateStudentizer)?;
                m * &delta * root_n
            }
        };
        if !piv.iter().all(|v| v.is_finite()) {
            return Err(Rejection::DegenerateStudentizer);
        }
        out.push(piv);
    }
    Ok(out)
}

/// Solve one replicate and return (β*, pivot).
#[allow(clippy::too_many_arguments)]
pub fn perturb_pivot(
    data: &RegressionData,
    score: &ScoreFunction,
    fit: &MFit,
    weights: &[f64],
    scheme: &WeightScheme,
    kind: PivotKind,
    opts: &BootOptions,
) -> Result<(DVector<f64>, DVector<f64>), Rejection> {
    let beta = perturb_replicate(data, score, fit, weights, opts)?;
    let mut piv = pivots_from_replicate(data, fit, &beta, weights, scheme.mu(), &[kind])?;
    Ok((beta, piv.remove(0)))
}

struct ReplicateResult {
    estimate: DVector<f64>,
    pivots: Vec<DVector<f64>>,
    rejected: usize,
}

/// Drive B replicates with redraws, in parallel, gathered in index order.
fn drive<F>(b: usize, opts: &BootOptions, one: F) -> Result<(Vec<ReplicateResult>, usize), BootError>
where
    F: Fn(u64, u64) -> Result<(DVector<f64>, Vec<DVector<f64>>), Rejection> + Sync + Send,
{
    if b == 0 {
        return Err(BootError::InvalidParameter("B must be at least 1".into()));
    }
    let max_attempts = opts.max_attempts;
    let run = || {
        (0..b as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rejected = 0;
                for attempt in 0..max_attempts {
                    match one(rep, attempt) {
                        Ok((estimate, pivots)) => {
                            return Some(ReplicateResult { estimate, pivots, rejected })
                        }
                        Err(_) => rejected += 1,
                    }
                }
                None
            })
            .collect::<Vec<_>>()
    };
    let results = with_threads(opts.threads, run)?;
    let total_rejected: usize = results.iter().map(|r| r.as_ref().map_or(max_attempts as usize, |r| r.rejected)).sum();
    let rate = total_rejected as f64 / b as f64;
    if results.iter().any(|r| r.is_none()) || rate > opts.fail_rate {
        return Err(BootError::ExcessiveRejection { rate, n_rejected: total_rejected, b });
    }
    if rate > opts.flag_rate {
        log::warn!("bootstrap rejection rate {rate:.4} exceeds {}; run flagged unreliable", opts.flag_rate);
    }
    Ok((results.into_iter().map(|r| r.expect("checked above")).collect(), total_rejected))
}

fn stack(rows: impl Iterator<Item = DVector<f64>>, b: usize, p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(b, p);
    for (i, r) in rows.enumerate() {
        m.row_mut(i).copy_from(&r.transpose());
    }
    m
}

fn require_usable(fit: &MFit) -> Result<(), BootError> {
    fit.require_sigma_hat()?;
    fit.studentizer()?;
    Ok(())
}

/// Perturbation bootstrap producing several pivot kinds from shared weights.
#[allow(clippy::too_many_arguments)]
pub fn run_perturbation_bootstrap_multi(
    data: &RegressionData,
    score: &ScoreFunction,
    fit: &MFit,
    scheme: &WeightScheme,
    kinds: &[PivotKind],
    b: usize,
    seed: u64,
    opts: &BootOptions,
) -> Result<Vec<PivotSample>, BootError> {
    require_usable(fit)?;
    if kinds.is_empty() {
        return Err(BootError::InvalidParameter("no pivot kinds requested".into()));
    }
    let n = data.n();
    let mu = scheme.mu();
    let (results, n_rejected) = drive(b, opts, |rep, attempt| {
        let w = scheme.draw_weights(n, seed, rep, attempt);
        let beta = perturb_replicate(data, score, fit, &w, opts)?;
        let piv = pivots_from_replicate(data, fit, &beta, &w, mu, kinds)?;
        Ok((beta, piv))
    })?;
    let p = data.p();
    let estimates = stack(results.iter().map(|r| r.estimate.clone()), b, p);
    let unreliable = n_rejected as f64 / b as f64 > opts.flag_rate;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| PivotSample {
            kind,
            engine: Engine::Perturb,
            pivots: stack(results.iter().map(|r| r.pivots[k].clone()), b, p),
            estimates: estimates.clone(),
            n_rejected,
            seed,
            b_requested: b,
            unreliable,
        })
        .collect())
}

#[allow(clippy::too_many_arguments)]
pub fn run_perturbation_bootstrap(
    data: &RegressionData,
    score: &ScoreFunction,
    fit: &MFit,
    scheme: &WeightScheme,
    kind: PivotKind,
    b: usize,
    seed: u64,
    opts: &BootOptions,
) -> Result<PivotSample, BootError> {
    Ok(run_perturbation_bootstrap_multi(data, score, fit, scheme, &[kind], b, seed, opts)?.remove(0))
}

/// Residual-bootstrap estimate from resampled centered-residual indices.
pub fn residual_replicate_from_indices(
    data: &RegressionData,
    fit: &MFit,
    indices: &[usize],
    opts: &SolverOptions,
) -> Result<MFit, Rejection> {
    let n = data.n();
    if indices.len() != n || indices.iter().any(|&i| i >= n) {
        return Err(Rejection::InvalidWeights);
    }
    let e_bar = fit.residuals.mean();
    let fitted = data.fitted(&fit.beta_bar);
    let y_star = DVector::from_iterator(
        n,
        (0..n).map(|i| fitted[i] + fit.residuals[indices[i]] - e_bar),
    );
    let d = data.with_response(y_star).map_err(|_| Rejection::InvalidWeights)?;
    mest::m_estimate(&d, &fit.score, opts).map_err(|e| match e {
        MestError::DegenerateStudentization(_) => Rejection::DegenerateStudentizer,
        MestError::SingularDesign => Rejection::SingularSystem,
        _ => Rejection::NonConvergence,
    })
}

/// Residual bootstrap: resample centered residuals, refit, studentize as Hₙ.
pub fn run_residual_bootstrap(
    data: &RegressionData,
    score: &ScoreFunction,
    fit: &MFit,
    b: usize,
    seed: u64,
    opts: &BootOptions,
) -> Result<PivotSample, BootError> {
    require_usable(fit)?;
    if score.name() != fit.score.name() || score.tuning() != fit.score.tuning() {
        return Err(BootError::InvalidParameter("score differs from the fitted score".into()));
    }
    let n = data.n();
    let root_n = (n as f64).sqrt();
    let (results, n_rejected) = drive(b, opts, |rep, attempt| {
        let mut r = rng::stream(seed, &[tag::RESIDUAL, rep, attempt]);
        let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let refit = residual_replicate_from_indices(data, fit, &idx, &opts.solver)?;
        let sigma = refit.require_sigma_hat().map_err(|_| Rejection::DegenerateStudentizer)?;
        let piv = &fit.a_n_half * (&refit.beta_bar - &fit.beta_bar) * (root_n / sigma);
        Ok((refit.beta_bar, vec![piv]))
    })?;
    let p = data.p();
    Ok(PivotSample {
        kind: PivotKind::H,
        engine: Engine::Residual,
        estimates: stack(results.iter().map(|r| r.estimate.clone()), b, p),
        pivots: stack(results.into_iter().map(|mut r| r.pivots.remove(0)), b, p),
        n_rejected,
        seed,
        b_requested: b,
        unreliable: n_rejected as f64 / b as f64 > opts.flag_rate,
    })
}

/// Mammen two-point multipliers: mean 0, variance 1, third moment 1.
pub const MAMMEN_LOW: f64 = (1.0 - 2.236_067_977_499_79) / 2.0;
pub const MAMMEN_HIGH: f64 = (1.0 + 2.236_067_977_499_79) / 2.0;
/// P(t = MAMMEN_LOW).
pub const MAMMEN_P_LOW: f64 = (2.236_067_977_499_79 + 1.0) / (2.0 * 2.236_067_977_499_79);

pub fn mammen_draw<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<f64>() < MAMMEN_P_LOW {
        MAMMEN_LOW
    } else {
        MAMMEN_HIGH
    }
}

/// Wild replicate yᵢ* = xᵢ′β̂ + ε̂ᵢtᵢ refit by least squares.
pub fn wild_replicate_from_multipliers(
    data: &RegressionData,
    fit: &MFit,
    t: &[f64],
) -> Result<DVector<f64>, Rejection> {
    let n = data.n();
    if t.len() != n {
        return Err(Rejection::InvalidWeights);
    }
    let fitted = data.fitted(&fit.beta_bar);
    let gram = weighted_gram(data, |_| 1.0);
    let rhs = weighted_cross(data, |i| fitted[i] + fit.residuals[i] * t[i]);
    linalg::solve_sym(&gram, &rhs).map_err(|_| Rejection::SingularSystem)
}

/// Wild bootstrap with Mammen multipliers and the heteroscedastic pivot
/// √n A₂*^(−1/2) Aₙ (β* − β̂), A₂* = n⁻¹ Σ xᵢxᵢ′ εᵢ*².
pub fn run_wild_bootstrap(
    data: &RegressionData,
    fit: &MFit,
    b: usize,
    seed: u64,
    opts: &BootOptions,
) -> Result<PivotSample, BootError> {
    if !fit.score.is_least_squares() {
        return Err(BootError::UnsupportedScore {
            engine: "wild",
            score: fit.score.name().to_string(),
        });
    }
    require_usable(fit)?;
    let n = data.n();
    let root_n = (n as f64).sqrt();
    let (results, n_rejected) = drive(b, opts, |rep, attempt| {
        let mut r = rng::stream(seed, &[tag::WILD, rep, attempt]);
        let t: Vec<f64> = (0..n).map(|_| mammen_draw(&mut r)).collect();
        let beta = wild_replicate_from_multipliers(data, fit, &t)?;
        let fitted = data.fitted(&fit.beta_bar);
        let b_s = beta.as_slice();
        let a2 = weighted_gram(data, |i| {
            let y_star = fitted[i] + fit.residuals[i] * t[i];
            (y_star - dot(data.row(i), b_s)).powi(2)
        });
        let m = studentizing_matrix(&fit.a_n, &a2).map_err(|_| Rejection::DegenerateStudentizer)?;
        let piv = m * (&beta - &fit.beta_bar) * root_n;
        Ok((beta, vec![piv]))
    })?;
    let p = data.p();
    Ok(PivotSample {
        kind: PivotKind::Hbreve,
        engine: Engine::Wild,
        estimates: stack(results.iter().map(|r| r.estimate.clone()), b, p),
        pivots: stack(results.into_iter().map(|mut r| r.pivots.remove(0)), b, p),
        n_rejected,
        seed,
        b_requested: b,
        unreliable: n_rejected as f64 / b as f64 > opts.flag_rate,
    })
}

/// Exact conditional covariance of the least-squares residual-bootstrap
/// estimate: n⁻¹Σ(eᵢ − ē)² · (X′X)⁻¹.
pub fn residual_conditional_variance_ls(
    data: &RegressionData,
    fit: &MFit,
) -> Result<DMatrix<f64>, BootError> {
    let n = data.n() as f64;
    let e_bar = fit.residuals.mean();
    let v = fit.residuals.iter().map(|e| (e - e_bar).powi(2)).sum::<f64>() / n;
    let xtx = fit.a_n.clone() * n;
    let inv = linalg::inverse(&xtx).map_err(|_| BootError::Mest(MestError::SingularDesign))?;
    Ok(inv * v)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Per-coordinate quantiles of a pivot sample.
pub fn pivot_quantiles(sample: &PivotSample, probs: &[f64]) -> Vec<Vec<f64>> {
    (0..sample.pivots.ncols())
        .map(|j| {
            let s = sorted(sample.coordinate(j));
            probs.iter().map(|&q| quantile_sorted(&s, q)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceIntervals {
    pub level: f64,
    pub intervals: Vec<Interval>,
    pub warnings: Vec<String>,
}

/// Matrix M of the original pivot √n M (β̄ₙ − β) that a sample approximates.
///
/// Hₙ-type samples (F, H, H̃ and residual) use σ̂ₙ⁻¹Aₙ^(1/2); H̆ and wild
/// samples use Σ̄ₙ^(−1/2).
pub fn original_transform(sample: &PivotSample, fit: &MFit) -> Result<DMatrix<f64>, BootError> {
    match (sample.engine, sample.kind) {
        (Engine::Wild, _) | (_, PivotKind::Hbreve) => Ok(fit.studentizer()?.clone()),
        _ => Ok(&fit.a_n_half / fit.require_sigma_hat()?),
    }
}

/// Pivot-percentile intervals.
///
/// For coordinate j let v = row j of M⁻¹ and scaleⱼ = ‖v‖. The scalar pivot
/// Sⱼ = v′T/‖v‖ equals √n(β̄ⱼ − βⱼ)/scaleⱼ on the original side, so
/// [β̄ⱼ − q(1−α/2)·scaleⱼ/√n, β̄ⱼ − q(α/2)·scaleⱼ/√n] with q the bootstrap
/// quantiles of Sⱼ*. For p = 1 this is the plain pivot.
pub fn bootstrap_ci(
    sample: &PivotSample,
    fit: &MFit,
    level: f64,
) -> Result<ConfidenceIntervals, BootError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(BootError::InvalidParameter(format!("level must be in (0,1), got {level}")));
    }
    let b = sample.pivots.nrows();
    if b < 100 {
        return Err(BootError::InvalidParameter(format!("need B >= 100 for intervals, got {b}")));
    }
    let alpha = 1.0 - level;
    let mut warnings = Vec::new();
    if (b as f64) * alpha / 2.0 < 1.0 {
        let msg = format!(
            "B = {b} leaves fewer than one replicate beyond the {:.4} quantile; endpoints are extrapolated from the sample extremes",
            alpha / 2.0
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let m_inv = linalg::inverse(&original_transform(sample, fit)?)
        .map_err(|_| BootError::Mest(MestError::SingularDesign))?;
    let root_n = (fit.n() as f64).sqrt();
    let intervals = (0..fit.p())
        .map(|j| {
            let v = m_inv.row(j).transpose();
            let scale = v.norm();
            let unit = &v / scale;
            let s = sorted(
                (0..b)
                    .map(|i| dot(sample.pivots.row(i).transpose().as_slice(), unit.as_slice()))
                    .collect(),
            );
            let q_lo = quantile_sorted(&s, alpha / 2.0);
            let q_hi = quantile_sorted(&s, 1.0 - alpha / 2.0);
            let est = fit.beta_bar[j];
            Interval {
                estimate: est,
                lower: est - q_hi * scale / root_n,
                upper: est - q_lo * scale / root_n,
            }
        })
        .collect();
    Ok(ConfidenceIntervals { level, intervals, warnings })
}
