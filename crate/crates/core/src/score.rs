//! Score functions ψ with analytic first and second derivatives.
//!
//! Only twice-differentiable scores whose second derivative is Lipschitz are
//! admitted. Classical Huber and Tukey scores are not, so the built-in families
//! are least squares and the pseudo-Huber surrogate. Custom C² scores can be
//! registered through [`ScoreFunction::custom`].

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("invalid score parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown score `{0}` (expected `ls` or `pseudo-huber`)")]
    UnknownScore(String),
}

type RealFn = dyn Fn(f64) -> f64 + Send + Sync;

#[derive(Clone)]
struct CustomScore {
    psi: Arc<RealFn>,
    d1: Arc<RealFn>,
    d2: Arc<RealFn>,
}

#[derive(Clone)]
enum Family {
    LeastSquares,
    PseudoHuber { inv_c2: f64 },
    Custom(CustomScore),
}

/// The triple (ψ, ψ′, ψ″) plus its name and tuning constant.
///
/// Immutable once built; cloning is cheap and values can be shared freely
/// between bootstrap workers.
#[derive(Clone)]
pub struct ScoreFunction {
    name: String,
    tuning: f64,
    family: Family,
}

impl fmt::Debug for ScoreFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreFunction")
            .field("name", &self.name)
            .field("tuning", &self.tuning)
            .finish()
    }
}

/// ψ(x) = x, from the squared-error objective.
pub fn make_least_squares() -> ScoreFunction {
    ScoreFunction {
        name: "ls".to_string(),
        tuning: 1.0,
        family: Family::LeastSquares,
    }
}

/// Pseudo-Huber score ψ(x) = x / √(1 + x²/c²), bounded by c in absolute value.
pub fn make_smooth_huber(c: f64) -> Result<ScoreFunction, ScoreError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(ScoreError::InvalidParameter(format!(
            "pseudo-huber tuning constant must be positive and finite, got {c}"
        )));
    }
    Ok(ScoreFunction {
        name: "pseudo-huber".to_string(),
        tuning: c,
        family: Family::PseudoHuber { inv_c2: 1.0 / (c * c) },
    })
}

impl ScoreFunction {
    /// Register a user-supplied score. The caller is responsible for the
    /// derivatives being exact.
    pub fn custom<F, D1, D2>(
        name: impl Into<String>,
        tuning: f64,
        psi: F,
        deriv1: D1,
        deriv2: D2,
    ) -> Result<Self, ScoreError>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(tuning > 0.0) {
            return Err(ScoreError::InvalidParameter(format!(
                "tuning constant must be positive, got {tuning}"
            )));
        }
        Ok(Self {
            name: name.into(),
            tuning,
            family: Family::Custom(CustomScore {
                psi: Arc::new(psi),
                d1: Arc::new(deriv1),
                d2: Arc::new(deriv2),
            }),
        })
    }

    /// Look up a built-in family by its CLI name.
    pub fn from_name(name: &str, tuning: f64) -> Result<Self, ScoreError> {
        match name {
            "ls" | "least-squares" => Ok(make_least_squares()),
            "pseudo-huber" | "huber" => make_smooth_huber(tuning),
            other => Err(ScoreError::UnknownScore(other.to_string())),
        }
    }

    /// c·ψ as a custom score. Estimators are unchanged by this rescaling.
    pub fn scaled(&self, c: f64) -> Result<Self, ScoreError> {
        if !(c > 0.0) {
            return Err(ScoreError::InvalidParameter(format!(
                "score scale must be positive, got {c}"
            )));
        }
        let (a, b, d) = (self.clone(), self.clone(), self.clone());
        Self::custom(
            format!("{}*{c}", self.name),
            self.tuning,
            move |x| c * a.eval(x),
            move |x| c * b.deriv1(x),
            move |x| c * d.deriv2(x),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn tuning(&self) -> f64 {
        self.tuning
    }

    /// True for ψ(x) = x, which unlocks closed-form solves.
    pub fn is_least_squares(&self) -> bool {
        matches!(self.family, Family::LeastSquares)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match &self.family {
            Family::LeastSquares => x,
            Family::PseudoHuber { inv_c2 } => x / (1.0 + x * x * inv_c2).sqrt(),
            Family::Custom(c) => (c.psi)(x),
        }
    }

    #[inline]
    pub fn deriv1(&self, x: f64) -> f64 {
        match &self.family {
            Family::LeastSquares => 1.0,
            Family::PseudoHuber { inv_c2 } => (1.0 + x * x * inv_c2).powf(-1.5),
            Family::Custom(c) => (c.d1)(x),
        }
    }

    #[inline]
    pub fn deriv2(&self, x: f64) -> f64 {
        match &self.family {
            Family::LeastSquares => 0.0,
            Family::PseudoHuber { inv_c2 } => -3.0 * x * inv_c2 * (1.0 + x * x * inv_c2).powf(-2.5),
            Family::Custom(c) => (c.d2)(x),
        }
    }
}
