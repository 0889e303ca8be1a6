//! Perturbation weights G*ᵢ and moment validation.
//!
//! A valid scheme is non-negative with Var G* = μ² and E(G* − μ)³ = μ³, where
//! μ = E G*. The built-in law is c·Beta(1/2, 3/2), which meets both identities
//! for every c > 0. Beta draws are formed from two gamma variates,
//! Γ(1/2) = Z²/2 and Γ(3/2) = Z′²/2 + E, so the density's boundary spike at
//! zero needs no inverse-CDF evaluation.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::rng::{self, tag, StreamRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("invalid weight parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown weight scheme `{0}` (expected `beta-half` or `scaled-beta-half`)")]
    UnknownScheme(String),

    #[error("sampler produced a negative weight {value} at draw {index}")]
    NegativeWeight { index: usize, value: f64 },

    #[error("sampler produced a non-finite weight at draw {index}")]
    NonFiniteWeight { index: usize },
}

/// Analytic moments of G*: mean, variance, third central and fourth raw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightMoments {
    pub mean: f64,
    pub variance: f64,
    pub third_central: f64,
    pub fourth_raw: f64,
}

type Sampler = dyn Fn(&mut StreamRng) -> f64 + Send + Sync;

#[derive(Clone)]
enum Family {
    ScaledBetaHalf { c: f64 },
    Custom(Arc<Sampler>),
}

#[derive(Clone)]
pub struct WeightScheme {
    name: String,
    family: Family,
    mu: f64,
    moments: Option<WeightMoments>,
}

impl fmt::Debug for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WeightScheme")
            .field("name", &self.name)
            .field("mu", &self.mu)
            .field("moments", &self.moments)
            .finish()
    }
}

/// One Beta(1/2, 3/2) variate.
#[inline]
fn beta_half<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let e: f64 = rng.sample(Exp1);
    let g_half = 0.5 * z1 * z1;
    let g_three_halves = 0.5 * z2 * z2 + e;
    g_half / (g_half + g_three_halves)
}

/// Beta(1/2, 3/2): μ = 1/4, variance 1/16, third central moment 1/64.
pub fn make_beta_half() -> WeightScheme {
    make_scaled_beta_half(1.0).expect("unit scale is valid")
}

/// c·Beta(1/2, 3/2): μ = c/4. The default c = 4 gives unit-mean weights.
pub fn make_scaled_beta_half(c: f64) -> Result<WeightScheme, WeightError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(WeightError::InvalidParameter(format!(
            "weight scale must be positive and finite, got {c}"
        )));
    }
    let name = if c == 1.0 { "beta-half".to_string() } else { "scaled-beta-half".to_string() };
    Ok(WeightScheme {
        name,
        family: Family::ScaledBetaHalf { c },
        mu: c / 4.0,
        moments: Some(WeightMoments {
            mean: c / 4.0,
            variance: c * c / 16.0,
            third_central: c.powi(3) / 64.0,
            fourth_raw: c.powi(4) * 7.0 / 128.0,
        }),
    })
}

impl WeightScheme {
    /// A user sampler with declared mean `mu`. Moments are not known analytically.
    pub fn custom<F>(name: impl Into<String>, mu: f64, sampler: F) -> Result<Self, WeightError>
    where
        F: Fn(&mut StreamRng) -> f64 + Send + Sync + 'static,
    {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(WeightError::InvalidParameter(format!(
                "declared mean must be positive, got {mu}"
            )));
        }
        Ok(Self {
            name: name.into(),
            family: Family::Custom(Arc::new(sampler)),
            mu,
            moments: None,
        })
    }

    /// Built-in scheme by CLI name.
    pub fn from_name(name: &str, scale: f64) -> Result<Self, WeightError> {
        match name {
            "beta-half" => Ok(make_beta_half()),
            "scaled-beta-half" => make_scaled_beta_half(scale),
            other => Err(WeightError::UnknownScheme(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn moments(&self) -> Option<WeightMoments> {
        self.moments
    }

    #[inline]
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match &self.family {
            Family::ScaledBetaHalf { c } => c * beta_half(rng),
            Family::Custom(f) => f(rng),
        }
    }

    /// Weights for one bootstrap replicate, a pure function of
    /// (seed, replicate, attempt).
    pub fn draw_weights(&self, n: usize, seed: u64, replicate: u64, attempt: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, &[tag::WEIGHTS, replicate, attempt]);
        (0..n).map(|_| self.sample(&mut r)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCheck {
    pub name: &'static str,
    pub sample: f64,
    pub target: f64,
    pub mc_se: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub scheme: String,
    pub m: usize,
    pub checks: Vec<MomentCheck>,
    pub negative_draws: usize,
    pub pass: bool,
}

/// Sigma multiple used for the moment checks.
pub const VALIDATION_Z: f64 = 6.0;

/// Draw `m` weights and test E G = μ, Var G = μ², E(G−μ)³ = μ³ within
/// `VALIDATION_Z` Monte Carlo standard errors. Any negative draw is an error.
pub fn validate_scheme(
    scheme: &WeightScheme,
    m: usize,
    seed: u64,
) -> Result<ValidationReport, WeightError> {
    if m < 10_000 {
        return Err(WeightError::InvalidParameter(format!(
            "validation needs at least 10^4 draws, got {m}"
        )));
    }
    let mut r = rng::stream(seed, &[tag::VALIDATE]);
    let mut draws = Vec::with_capacity(m);
    for index in 0..m {
        let g = scheme.sample(&mut r);
        if !g.is_finite() {
            return Err(WeightError::NonFiniteWeight { index });
        }
        if g < 0.0 {
            return Err(WeightError::NegativeWeight { index, value: g });
        }
        draws.push(g);
    }

    let mf = m as f64;
    let mean = draws.iter().sum::<f64>() / mf;
    let central = |k: i32| draws.iter().map(|g| (g - mean).powi(k)).sum::<f64>() / mf;
    let (m2, m3, m4, m6) = (central(2), central(3), central(4), central(6));

    let mu = scheme.mu();
    let se_mean = (m2 / mf).sqrt();
    let se_var = ((m4 - m2 * m2).max(0.0) / mf).sqrt();
    let se_third = ((m6 - m3 * m3 - 6.0 * m4 * m2 + 9.0 * m2.powi(3)).max(0.0) / mf).sqrt();

    let check = |name, sample: f64, target: f64, mc_se: f64| MomentCheck {
        name,
        sample,
        target,
        mc_se,
        pass: (sample - target).abs() <= VALIDATION_Z * mc_se,
    };
    let checks = vec![
        check("mean", mean, mu, se_mean),
        check("variance", m2, mu * mu, se_var),
        check("third_central", m3, mu.powi(3), se_third),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport {
        scheme: scheme.name().to_string(),
        m,
        checks,
        negative_draws: 0,
        pass,
    })
}
