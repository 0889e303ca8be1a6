//! Monte Carlo harness comparing bootstrap approximations with the sampling
//! distribution of the original pivots.
//!
//! A scenario fixes a design once and then draws independent error vectors.
//! The "truth" is the empirical law of Hₙ (and H̆ₙ) over `truth_reps` fresh
//! datasets. Separately, each of `outer_reps` datasets is bootstrapped by
//! every requested method, and the method's pivot sample is compared with the
//! truth by the sup-distance over half-lines in each coordinate (and, for
//! p = 2, rectangles on a 20×20 grid of truth quantiles). All methods see the
//! same datasets and the perturbation methods share weights, so method
//! comparisons are paired.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::boot::{
    self, bootstrap_ci, run_perturbation_bootstrap_multi, run_residual_bootstrap, run_wild_bootstrap, BootError,
    BootOptions, PivotKind, PivotSample,
};
use crate::diagnostics::example31_design;
use crate::mest::{
    m_estimate, pivot_original_hetero, pivot_original_studentized, DataError, MFit, MestError, RegressionData,
    SolverOptions,
};
use crate::perturb::{WeightError, WeightScheme};
use crate::rng::{self, derive_key, tag};
use crate::score::{ScoreError, ScoreFunction};
use crate::stats;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Mest(#[from] MestError),

    #[error(transparent)]
    Boot(#[from] BootError),

    #[error(transparent)]
    Score(#[from] ScoreError),

    #[error(transparent)]
    Weights(#[from] WeightError),

    #[error("design file: {0}")]
    Design(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DesignSpec {
    /// A single column of ones (location model).
    Ones,
    /// IID standard normal entries.
    Example31Gaussian {
        #[serde(default)]
        intercept: bool,
    },
    /// IID Uniform(low, high) entries.
    Uniform {
        low: f64,
        high: f64,
        #[serde(default)]
        intercept: bool,
    },
    /// Design read from a headed CSV; every column is used.
    FixedCsv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ErrorLaw {
    Normal { sigma: f64 },
    /// Exp(rate) − 1/rate.
    CenteredExponential { rate: f64 },
    /// Student t with `df` > 2 degrees of freedom rescaled to unit variance.
    ScaledT { df: f64 },
    /// N(0, σᵢ²) with σᵢ = base + slope·‖xᵢ‖.
    Hetero { base: f64, slope: f64 },
}

impl ErrorLaw {
    fn is_symmetric(&self) -> bool {
        !matches!(self, ErrorLaw::CenteredExponential { .. })
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        match *self {
            ErrorLaw::Normal { sigma } if !(sigma > 0.0) => bad(format!("normal sigma must be positive, got {sigma}")),
            ErrorLaw::CenteredExponential { rate } if !(rate > 0.0) => {
                bad(format!("exponential rate must be positive, got {rate}"))
            }
            ErrorLaw::ScaledT { df } if !(df > 2.0) => bad(format!("scaled-t needs df > 2, got {df}")),
            ErrorLaw::Hetero { base, slope } if !(base > 0.0) || !(slope >= 0.0) => {
                bad(format!("hetero needs base > 0 and slope >= 0, got {base}, {slope}"))
            }
            _ => Ok(()),
        }
    }

    /// Per-row standard deviations.
    fn sigmas(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let n = x.nrows();
        match *self {
            ErrorLaw::Normal { sigma } => vec![sigma; n],
            ErrorLaw::CenteredExponential { rate } => vec![1.0 / rate; n],
            ErrorLaw::ScaledT { .. } => vec![1.0; n],
            ErrorLaw::Hetero { base, slope } => (0..n).map(|i| base + slope * x.row(i).norm()).collect(),
        }
    }

    fn draw(&self, sigmas: &[f64], r: &mut rng::StreamRng) -> Vec<f64> {
        match *self {
            ErrorLaw::Normal { .. } | ErrorLaw::Hetero { .. } => {
                sigmas.iter().map(|s| s * r.sample::<f64, _>(StandardNormal)).collect()
            }
            ErrorLaw::CenteredExponential { rate } => {
                (0..sigmas.len()).map(|_| (r.sample::<f64, _>(Exp1) - 1.0) / rate).collect()
            }
            ErrorLaw::ScaledT { df } => {
                let t = StudentT::new(df).expect("validated df");
                let scale = ((df - 2.0) / df).sqrt();
                (0..sigmas.len()).map(|_| scale * r.sample::<f64, _>(t)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSpec {
    pub name: String,
    #[serde(default = "default_tuning")]
    pub tuning: f64,
}

fn default_tuning() -> f64 {
    1.345
}

impl ScoreSpec {
    pub fn build(&self) -> Result<ScoreFunction, ScoreError> {
        ScoreFunction::from_name(&self.name, self.tuning)
    }
}

impl Default for ScoreSpec {
    fn default() -> Self {
        Self { name: "ls".into(), tuning: default_tuning() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub name: String,
    #[serde(default = "default_weight_scale")]
    pub scale: f64,
}

fn default_weight_scale() -> f64 {
    4.0
}

impl WeightSpec {
    pub fn build(&self) -> Result<WeightScheme, WeightError> {
        WeightScheme::from_name(&self.name, self.scale)
    }
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { name: "scaled-beta-half".into(), scale: default_weight_scale() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    NormalApprox,
    PerturbNaive,
    PerturbModified,
    PerturbHetero,
    Residual,
    Wild,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::NormalApprox,
        Method::PerturbNaive,
        Method::PerturbModified,
        Method::PerturbHetero,
        Method::Residual,
        Method::Wild,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::NormalApprox => "normal-approx",
            Method::PerturbNaive => "perturb-naive",
            Method::PerturbModified => "perturb-modified",
            Method::PerturbHetero => "perturb-hetero",
            Method::Residual => "residual",
            Method::Wild => "wild",
        }
    }

    /// Whether the method targets H̆ₙ rather than Hₙ.
    fn targets_hetero(self) -> bool {
        matches!(self, Method::PerturbHetero | Method::Wild)
    }

    fn perturb_kind(self) -> Option<PivotKind> {
        match self {
            Method::PerturbNaive => Some(PivotKind::H),
            Method::PerturbModified => Some(PivotKind::Htilde),
            Method::PerturbHetero => Some(PivotKind::Hbreve),
            _ => None,
        }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_level() -> f64 {
    0.95
}

/// Budget growth for rate sweeps: B and the truth size proportional to n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n_grid: Vec<usize>,
    /// B = b_per_n · n when set.
    #[serde(default)]
    pub b_per_n: Option<usize>,
    /// truth_reps = truth_per_n · n when set.
    #[serde(default)]
    pub truth_per_n: Option<usize>,
}

/// One Monte Carlo experiment, deserializable from a sectioned config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    /// Fresh datasets for the truth distribution (0 disables distances).
    pub truth_reps: usize,
    /// Datasets that are bootstrapped.
    pub outer_reps: usize,
    pub b: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Defaults to the zero vector.
    #[serde(default)]
    pub beta_true: Option<Vec<f64>>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    pub design: DesignSpec,
    pub errors: ErrorLaw,
    #[serde(default)]
    pub score: ScoreSpec,
    #[serde(default)]
    pub weights: WeightSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

impl Scenario {
    pub fn beta(&self) -> DVector<f64> {
        match &self.beta_true {
            Some(b) => DVector::from_column_slice(b),
            None => DVector::zeros(self.p),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.p == 0 || self.n <= self.p {
            return bad(format!("need n > p >= 1, got n = {}, p = {}", self.n, self.p));
        }
        if let Some(b) = &self.beta_true {
            if b.len() != self.p {
                return bad(format!("beta_true has {} entries, p = {}", b.len(), self.p));
            }
        }
        if self.outer_reps == 0 {
            return bad("outer_reps must be at least 1".into());
        }
        if self.b < 100 {
            return bad(format!("b must be at least 100, got {}", self.b));
        }
        if self.truth_reps != 0 && self.truth_reps < 100 {
            return bad(format!("truth_reps must be 0 or at least 100, got {}", self.truth_reps));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must be in (0,1), got {}", self.level));
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        if matches!(self.design, DesignSpec::Ones) && self.p != 1 {
            return bad("the ones design needs p = 1".into());
        }
        if let DesignSpec::Uniform { low, high, .. } = self.design {
            if !(high > low) {
                return bad(format!("uniform design needs high > low, got [{low}, {high}]"));
            }
        }
        self.errors.validate()?;
        let score = self.score.build()?;
        if !score.is_least_squares() && !self.errors.is_symmetric() {
            return bad("a non-least-squares score needs a symmetric error law so that E ψ(ε) = 0".into());
        }
        if self.methods.contains(&Method::Wild) && !score.is_least_squares() {
            return bad("the wild method needs the least-squares score".into());
        }
        self.weights.build()?;
        if self.b < 200 {
            log::warn!("B = {} is below 200, too small for acceptance-grade comparisons", self.b);
        }
        Ok(())
    }

    /// The scenario at sample size n, with budgets grown per the sweep spec.
    pub fn at_n(&self, n: usize) -> Scenario {
        let mut s = self.clone();
        s.n = n;
        if let Some(sw) = &self.sweep {
            if let Some(k) = sw.b_per_n {
                s.b = k * n;
            }
            if let Some(k) = sw.truth_per_n {
                s.truth_reps = k * n;
            }
        }
        s
    }
}

/// Design matrix for a scenario, drawn once from its seed.
pub fn build_design(s: &Scenario) -> Result<DMatrix<f64>, SimError> {
    let (n, p) = (s.n, s.p);
    let with_intercept = |mut x: DMatrix<f64>, intercept: bool| {
        if intercept {
            x.column_mut(0).fill(1.0);
        }
        x
    };
    let x = match &s.design {
        DesignSpec::Ones => DMatrix::from_element(n, 1, 1.0),
        DesignSpec::Example31Gaussian { intercept } => with_intercept(example31_design(n, p, s.seed), *intercept),
        DesignSpec::Uniform { low, high, intercept } => {
            let mut r = rng::stream(s.seed, &[tag::DESIGN, n as u64, p as u64, 1]);
            let x = DMatrix::from_fn(n, p, |_, _| low + (high - low) * r.random::<f64>());
            with_intercept(x, *intercept)
        }
        DesignSpec::FixedCsv { path } => {
            let x = crate::io::load_design_csv(path).map_err(|e| SimError::Design(e.to_string()))?;
            if x.shape() != (n, p) {
                return Err(SimError::InvalidScenario(format!(
                    "design file is {}×{}, scenario says {n}×{p}",
                    x.nrows(),
                    x.ncols()
                )));
            }
            x
        }
    };
    Ok(x)
}

/// Context shared by all draws of a scenario.
struct World {
    x_data: RegressionData,
    sigmas: Vec<f64>,
    beta: DVector<f64>,
    fitted_true: Vec<f64>,
    score: ScoreFunction,
    scheme: WeightScheme,
    solver: SolverOptions,
}

impl World {
    fn new(s: &Scenario) -> Result<Self, SimError> {
        s.validate()?;
        let x = build_design(s)?;
        let beta = s.beta();
        let sigmas = s.errors.sigmas(&x);
        let y0 = &x * &beta;
        let x_data = RegressionData::new(x, y0.clone())?;
        Ok(Self {
            fitted_true: y0.iter().copied().collect(),
            x_data,
            sigmas,
            beta,
            score: s.score.build()?,
            scheme: s.weights.build()?,
            solver: SolverOptions::default(),
        })
    }

    fn dataset(&self, s: &Scenario, path: &[u64]) -> Result<RegressionData, SimError> {
        let mut r = rng::stream(s.seed, path);
        let e = s.errors.draw(&self.sigmas, &mut r);
        let y = DVector::from_iterator(e.len(), self.fitted_true.iter().zip(&e).map(|(m, e)| m + e));
        Ok(self.x_data.with_response(y)?)
    }

    fn fit(&self, d: &RegressionData) -> Result<MFit, SimError> {
        Ok(m_estimate(d, &self.score, &self.solver)?)
    }
}

/// Empirical truth: sorted coordinates of Hₙ and H̆ₙ plus raw columns for rectangles.
pub struct Truth {
    pub h: Vec<Vec<f64>>,
    pub hbreve: Vec<Vec<f64>>,
    h_sorted: Vec<Vec<f64>>,
    hbreve_sorted: Vec<Vec<f64>>,
}

fn columns(rows: &[DVector<f64>], p: usize) -> Vec<Vec<f64>> {
    (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

/// (Hₙ, H̆ₙ) of one fresh dataset.
type PivotPair = (DVector<f64>, DVector<f64>);

fn truth_sample(world: &World, s: &Scenario) -> Result<Truth, SimError> {
    let draws: Result<Vec<PivotPair>, SimError> = (0..s.truth_reps as u64)
        .into_par_iter()
        .map(|m| {
            let d = world.dataset(s, &[tag::TRUTH, m])?;
            let f = world.fit(&d)?;
            Ok((pivot_original_studentized(&f, &world.beta)?, pivot_original_hetero(&f, &world.beta)?))
        })
        .collect();
    let draws = draws?;
    let h: Vec<DVector<f64>> = draws.iter().map(|d| d.0.clone()).collect();
    let hb: Vec<DVector<f64>> = draws.iter().map(|d| d.1.clone()).collect();
    let h = columns(&h, s.p);
    let hbreve = columns(&hb, s.p);
    Ok(Truth {
        h_sorted: h.iter().map(|c| stats::sorted(c)).collect(),
        hbreve_sorted: hbreve.iter().map(|c| stats::sorted(c)).collect(),
        h,
        hbreve,
    })
}

/// Cut points for the rectangle class: truth quantiles at k/21, k = 1..20.
fn grid_cuts(sorted: &[f64]) -> Vec<f64> {
    (1..=20).map(|k| boot::quantile_sorted(sorted, k as f64 / 21.0)).collect()
}

/// Sup-distance between a method's pivot columns (None = standard normal) and the truth.
fn sup_distance(method_cols: Option<&[Vec<f64>]>, truth_cols: &[Vec<f64>], truth_sorted: &[Vec<f64>]) -> f64 {
    let p = truth_cols.len();
    let mut d: f64 = 0.0;
    for j in 0..p {
        let dj = match method_cols {
            Some(cols) => stats::ks_two_sample(&stats::sorted(&cols[j]), &truth_sorted[j]),
            None => stats::ks_vs_normal(&truth_sorted[j]),
        };
        d = d.max(dj);
    }
    if p == 2 {
        let (cx, cy) = (grid_cuts(&truth_sorted[0]), grid_cuts(&truth_sorted[1]));
        let t = (&truth_cols[0][..], &truth_cols[1][..]);
        let r = match method_cols {
            Some(cols) => stats::rect_distance((&cols[0], &cols[1]), t, &cx, &cy),
            None => stats::rect_distance_normal(t, &cx, &cy),
        };
        d = d.max(r);
    }
    d
}

fn sample_columns(s: &PivotSample) -> Vec<Vec<f64>> {
    (0..s.pivots.ncols()).map(|j| s.coordinate(j)).collect()
}

/// Normal-theory interval β̄ⱼ ± z·scaleⱼ/√n with M = σ̂ₙ⁻¹Aₙ^(1/2).
fn normal_ci_covers(fit: &MFit, beta: &DVector<f64>, level: f64) -> Result<Vec<bool>, SimError> {
    let m = &fit.a_n_half / fit.require_sigma_hat()?;
    let m_inv = crate::linalg::inverse(&m).map_err(|_| MestError::SingularDesign)?;
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let root_n = (fit.n() as f64).sqrt();
    Ok((0..fit.p())
        .map(|j| {
            let half = z * m_inv.row(j).norm() / root_n;
            (fit.beta_bar[j] - beta[j]).abs() <= half
        })
        .collect())
}

fn covers(s: &PivotSample, fit: &MFit, beta: &DVector<f64>, level: f64) -> Result<Vec<bool>, SimError> {
    let ci = bootstrap_ci(s, fit, level)?;
    Ok(ci.intervals.iter().enumerate().map(|(j, iv)| iv.lower <= beta[j] && beta[j] <= iv.upper).collect())
}

/// One dataset's outcome for one method.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetOutcome {
    pub dataset: usize,
    pub sup_distance: Option<f64>,
    pub covered: Vec<bool>,
    pub rejection_rate: f64,
}

fn run_dataset(
    world: &World,
    s: &Scenario,
    truth: Option<&Truth>,
    k: usize,
    opts: &BootOptions,
) -> Result<Vec<(Method, DatasetOutcome)>, SimError> {
    let d = world.dataset(s, &[tag::OUTER, k as u64])?;
    let fit = world.fit(&d)?;
    let boot_seed = derive_key(s.seed, &[tag::OUTER, k as u64]);
    let kinds: Vec<PivotKind> = s.methods.iter().filter_map(|m| m.perturb_kind()).collect();
    let perturb = if kinds.is_empty() {
        Vec::new()
    } else {
        run_perturbation_bootstrap_multi(&d, &world.score, &fit, &world.scheme, &kinds, s.b, boot_seed, opts)?
    };

    let mut out = Vec::with_capacity(s.methods.len());
    for &method in &s.methods {
        let truth_cols = truth.map(|t| if method.targets_hetero() { (&t.hbreve, &t.hbreve_sorted) } else { (&t.h, &t.h_sorted) });
        let outcome = if method == Method::NormalApprox {
            DatasetOutcome {
                dataset: k,
                sup_distance: truth_cols.map(|(c, sorted)| sup_distance(None, c, sorted)),
                covered: normal_ci_covers(&fit, &world.beta, s.level)?,
                rejection_rate: 0.0,
            }
        } else {
            let sample = match method {
                Method::Residual => run_residual_bootstrap(&d, &world.score, &fit, s.b, boot_seed, opts)?,
                Method::Wild => run_wild_bootstrap(&d, &fit, s.b, boot_seed, opts)?,
                m => {
                    let kind = m.perturb_kind().expect("perturbation method");
                    perturb.iter().find(|p| p.kind == kind).expect("kind was requested").clone()
                }
            };
            let cols = sample_columns(&sample);
            DatasetOutcome {
                dataset: k,
                sup_distance: truth_cols.map(|(c, sorted)| sup_distance(Some(&cols), c, sorted)),
                covered: covers(&sample, &fit, &world.beta, s.level)?,
                rejection_rate: sample.rejection_rate(),
            }
        };
        out.push((method, outcome));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    /// Median sup-distance over datasets (None without a truth sample).
    pub sup_distance: Option<f64>,
    /// Standard error of that median.
    pub mc_se: Option<f64>,
    /// √n · sup_distance.
    pub scaled_distance: Option<f64>,
    pub coverage: f64,
    pub coverage_se: f64,
    pub mean_rejection_rate: f64,
    pub outcomes: Vec<DatasetOutcome>,
}

/// Paired comparison of two methods on the same datasets.
#[derive(Debug, Clone, Serialize)]
pub struct PairedGap {
    pub first: Method,
    pub second: Method,
    /// median(first) − median(second) of the sup-distances.
    pub distance_gap: Option<f64>,
    /// √(π/2)·sd(paired differences)/√K.
    pub distance_gap_se: Option<f64>,
    /// coverage(first) − coverage(second).
    pub coverage_gap: f64,
    /// sd of paired coverage-indicator differences over √K.
    pub coverage_gap_se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimReport {
    pub scenario: Scenario,
    pub truth_reps: usize,
    pub datasets: usize,
    pub methods: Vec<MethodSummary>,
    pub partial: bool,
    pub errors: Vec<String>,
}

impl SimReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    pub fn paired_gap(&self, first: Method, second: Method) -> Option<PairedGap> {
        let a = self.method(first)?;
        let b = self.method(second)?;
        let pairs: Vec<(&DatasetOutcome, &DatasetOutcome)> = a
            .outcomes
            .iter()
            .filter_map(|o| b.outcomes.iter().find(|q| q.dataset == o.dataset).map(|q| (o, q)))
            .collect();
        if pairs.is_empty() {
            return None;
        }
        let k = pairs.len() as f64;
        let (distance_gap, distance_gap_se) = match (a.sup_distance, b.sup_distance) {
            (Some(da), Some(db)) => {
                let diffs: Vec<f64> = pairs
                    .iter()
                    .map(|(o, q)| o.sup_distance.unwrap_or(f64::NAN) - q.sup_distance.unwrap_or(f64::NAN))
                    .collect();
                (Some(da - db), Some(stats::median_se(&diffs)))
            }
            _ => (None, None),
        };
        let cov = |o: &DatasetOutcome| o.covered.iter().filter(|&&c| c).count() as f64 / o.covered.len() as f64;
        let cdiff: Vec<f64> = pairs.iter().map(|(o, q)| cov(o) - cov(q)).collect();
        Some(PairedGap {
            first,
            second,
            distance_gap,
            distance_gap_se,
            coverage_gap: a.coverage - b.coverage,
            coverage_gap_se: stats::sd(&cdiff) / k.sqrt(),
        })
    }

    /// Long-form rows for plotting.
    pub fn csv_rows(&self) -> Vec<SimRow> {
        let mut rows = Vec::new();
        for m in &self.methods {
            for o in &m.outcomes {
                rows.push(SimRow {
                    method: m.method.as_str().to_string(),
                    n: m.n,
                    seed: self.scenario.seed,
                    dataset: o.dataset,
                    sup_distance: o.sup_distance,
                    covered: o.covered.iter().all(|&c| c),
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRow {
    pub method: String,
    pub n: usize,
    pub seed: u64,
    pub dataset: usize,
    pub sup_distance: Option<f64>,
    pub covered: bool,
}

fn summarize(method: Method, n: usize, outcomes: Vec<DatasetOutcome>) -> MethodSummary {
    let dists: Vec<f64> = outcomes.iter().filter_map(|o| o.sup_distance).collect();
    let (sup, se) = if dists.is_empty() {
        (None, None)
    } else {
        (Some(stats::median(&dists)), Some(stats::median_se(&dists)))
    };
    let cov: Vec<f64> = outcomes.iter().flat_map(|o| o.covered.iter().map(|&c| if c { 1.0 } else { 0.0 })).collect();
    let coverage = stats::mean(&cov);
    let k = outcomes.len() as f64;
    MethodSummary {
        method,
        n,
        sup_distance: sup,
        mc_se: se,
        scaled_distance: sup.map(|d| d * (n as f64).sqrt()),
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / k).sqrt(),
        mean_rejection_rate: stats::mean(&outcomes.iter().map(|o| o.rejection_rate).collect::<Vec<_>>()),
        outcomes,
    }
}

/// Run a scenario. Per-dataset engine failures are collected and flag the
/// report as partial; summaries then cover the successful datasets.
pub fn run_scenario(s: &Scenario, opts: &BootOptions) -> Result<SimReport, SimError> {
    let world = World::new(s)?;
    let work = || -> Result<SimReport, SimError> {
        let truth = if s.truth_reps > 0 { Some(truth_sample(&world, s)?) } else { None };
        // inner bootstraps run on the surrounding pool
        let inner = BootOptions { threads: None, ..*opts };
        let per_dataset: Vec<Result<Vec<(Method, DatasetOutcome)>, SimError>> = (0..s.outer_reps)
            .into_par_iter()
            .map(|k| run_dataset(&world, s, truth.as_ref(), k, &inner))
            .collect();
        let mut errors = Vec::new();
        let mut by_method: Vec<Vec<DatasetOutcome>> = vec![Vec::new(); s.methods.len()];
        for (k, r) in per_dataset.into_iter().enumerate() {
            match r {
                Ok(list) => {
                    for (i, (_, o)) in list.into_iter().enumerate() {
                        by_method[i].push(o);
                    }
                }
                Err(e) => errors.push(format!("dataset {k}: {e}")),
            }
        }
        if by_method.iter().all(|v| v.is_empty()) {
            return Err(SimError::InvalidScenario(format!("every dataset failed; first error: {}", errors[0])));
        }
        Ok(SimReport {
            scenario: s.clone(),
            truth_reps: s.truth_reps,
            datasets: by_method[0].len(),
            methods: s.methods.iter().zip(by_method).map(|(&m, o)| summarize(m, s.n, o)).collect(),
            partial: !errors.is_empty(),
            errors,
        })
    };
    boot::with_threads(opts.threads, work)?
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTrend {
    pub method: Method,
    pub n_grid: Vec<usize>,
    /// Median √n-scaled sup-distance at each n.
    pub scaled: Vec<f64>,
    pub scaled_se: Vec<f64>,
    pub monotone_decreasing: bool,
    /// scaled[last] / scaled[first].
    pub last_over_first: f64,
    /// Spearman correlation of per-dataset scaled distances with n.
    pub spearman_rho: f64,
    pub spearman_p: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub reports: Vec<SimReport>,
    pub trends: Vec<SweepTrend>,
}

/// Run the scenario at each n in `n_grid` (at least three increasing sizes).
pub fn rate_sweep(s: &Scenario, n_grid: &[usize], opts: &BootOptions) -> Result<SweepReport, SimError> {
    if n_grid.len() < 3 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SimError::InvalidScenario("n_grid needs at least three increasing sizes".into()));
    }
    if s.truth_reps == 0 && s.sweep.as_ref().and_then(|w| w.truth_per_n).is_none() {
        return Err(SimError::InvalidScenario("a rate sweep needs a truth sample".into()));
    }
    let mut reports = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let sn = s.at_n(n);
        log::info!("rate sweep: n = {n}, B = {}, truth = {}", sn.b, sn.truth_reps);
        reports.push(run_scenario(&sn, opts)?);
    }
    let trends = s
        .methods
        .iter()
        .map(|&m| {
            let mut scaled = Vec::new();
            let mut scaled_se = Vec::new();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (r, &n) in reports.iter().zip(n_grid) {
                let ms = r.method(m).expect("method present");
                let root = (n as f64).sqrt();
                scaled.push(ms.scaled_distance.unwrap_or(f64::NAN));
                scaled_se.push(ms.mc_se.unwrap_or(f64::NAN) * root);
                for o in &ms.outcomes {
                    if let Some(d) = o.sup_distance {
                        xs.push(n as f64);
                        ys.push(d * root);
                    }
                }
            }
            let (rho, p) = stats::spearman(&xs, &ys);
            SweepTrend {
                method: m,
                n_grid: n_grid.to_vec(),
                monotone_decreasing: scaled.windows(2).all(|w| w[1] < w[0]),
                last_over_first: scaled[scaled.len() - 1] / scaled[0],
                scaled,
                scaled_se,
                spearman_rho: rho,
                spearman_p: p,
            }
        })
        .collect();
    Ok(SweepReport { reports, trends })
}

/// Conditional-variance experiment for the no-intercept model yᵢ = βxᵢ + εᵢ
/// with σᵢ = base + slope·|xᵢ|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeteroVarianceSpec {
    pub n: usize,
    pub x_low: f64,
    pub x_high: f64,
    pub base: f64,
    pub slope: f64,
    pub beta: f64,
    pub outer_reps: usize,
    pub b: usize,
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct HeteroVarianceReport {
    /// Σxᵢ²σᵢ²/(Σxᵢ²)².
    pub target: f64,
    /// Mean over datasets of the perturbation conditional variance of β*.
    pub perturb_mean: f64,
    pub perturb_se: f64,
    /// Mean over datasets of n⁻¹Σ(eᵢ − ē)²/Σxᵢ² (exact residual-bootstrap variance).
    pub residual_mean: f64,
    pub residual_se: f64,
    /// Largest relative gap between the closed-form residual variance and the
    /// explicit formula across datasets.
    pub residual_identity_max_rel_err: f64,
    /// Largest |MC variance − closed form| / MC SE of the residual bootstrap
    /// over the first few datasets.
    pub residual_mc_max_z: f64,
    pub datasets: usize,
}

/// Per dataset: perturbation variance, closed-form residual variance,
/// identity error and the optional MC z-score.
type HeteroRow = (f64, f64, f64, Option<f64>);

/// Perturbation vs residual bootstrap conditional variances under
/// heteroscedastic errors.
pub fn hetero_variance_experiment(spec: &HeteroVarianceSpec, opts: &BootOptions) -> Result<HeteroVarianceReport, SimError> {
    let scenario = Scenario {
        n: spec.n,
        p: 1,
        seed: spec.seed,
        truth_reps: 0,
        outer_reps: spec.outer_reps,
        b: spec.b,
        level: 0.95,
        beta_true: Some(vec![spec.beta]),
        methods: vec![Method::PerturbNaive],
        design: DesignSpec::Uniform { low: spec.x_low, high: spec.x_high, intercept: false },
        errors: ErrorLaw::Hetero { base: spec.base, slope: spec.slope },
        score: ScoreSpec::default(),
        weights: spec.weights.clone(),
        sweep: None,
    };
    let world = World::new(&scenario)?;
    let x: Vec<f64> = world.x_data.x().iter().copied().collect();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let target = x.iter().zip(&world.sigmas).map(|(v, s)| v * v * s * s).sum::<f64>() / (sxx * sxx);
    let scheme = world.scheme.clone();
    let mu = scheme.mu();
    let n = spec.n;

    let work = || -> Result<Vec<HeteroRow>, SimError> {
        (0..spec.outer_reps)
            .into_par_iter()
            .map(|k| {
                let d = world.dataset(&scenario, &[tag::OUTER, k as u64])?;
                let fit = world.fit(&d)?;
                let seed = derive_key(spec.seed, &[tag::OUTER, k as u64]);
                let inner = BootOptions { threads: None, ..*opts };
                let ps = run_perturbation_bootstrap_multi(&d, &world.score, &fit, &scheme, &[PivotKind::F], spec.b, seed, &inner)?;
                let est: Vec<f64> = ps[0].estimates.column(0).iter().copied().collect();
                // Var(G)/μ² = 1 for the built-in schemes; divide it out in general
                let m = scheme.moments().map_or(1.0, |m| m.variance / (mu * mu));
                let v_pert = stats::sd(&est).powi(2) / m;

                let closed = boot::residual_conditional_variance_ls(&d, &fit)?[(0, 0)];
                let e_bar = fit.residuals.mean();
                let explicit = fit.residuals.iter().map(|e| (e - e_bar).powi(2)).sum::<f64>() / n as f64 / sxx;
                let rel = ((closed - explicit) / explicit).abs();

                let z = if k < 5 {
                    let rs = run_residual_bootstrap(&d, &world.score, &fit, spec.b, seed, &inner)?;
                    let est: Vec<f64> = rs.estimates.column(0).iter().copied().collect();
                    let v = stats::sd(&est).powi(2);
                    // SE of a sample variance: √((m₄ − v²)/B)
                    let mean = stats::mean(&est);
                    let m4 = est.iter().map(|b| (b - mean).powi(4)).sum::<f64>() / est.len() as f64;
                    Some((v - closed).abs() / ((m4 - v * v).max(0.0) / est.len() as f64).sqrt())
                } else {
                    None
                };
                Ok((v_pert, closed, rel, z))
            })
            .collect()
    };
    let rows = boot::with_threads(opts.threads, work)??;
    let vp: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let vr: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let k = rows.len() as f64;
    Ok(HeteroVarianceReport {
        target,
        perturb_mean: stats::mean(&vp),
        perturb_se: stats::sd(&vp) / k.sqrt(),
        residual_mean: stats::mean(&vr),
        residual_se: stats::sd(&vr) / k.sqrt(),
        residual_identity_max_rel_err: rows.iter().map(|r| r.2).fold(0.0, f64::max),
        residual_mc_max_z: rows.iter().filter_map(|r| r.3).fold(0.0, f64::max),
        datasets: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(errors: ErrorLaw) -> Scenario {
        Scenario {
            n: 40,
            p: 1,
            seed: 5,
            truth_reps: 400,
            outer_reps: 6,
            b: 200,
            level: 0.9,
            beta_true: None,
            methods: default_methods(),
            design: DesignSpec::Ones,
            errors,
            score: ScoreSpec::default(),
            weights: WeightSpec::default(),
            sweep: None,
        }
    }

    #[test]
    fn scenario_validation() {
        let mut s = small(ErrorLaw::Normal { sigma: 1.0 });
        assert!(s.validate().is_ok());
        s.p = 2;
        assert!(s.validate().is_err());
        let mut s = small(ErrorLaw::CenteredExponential { rate: 1.0 });
        s.score = ScoreSpec { name: "pseudo-huber".into(), tuning: 1.0 };
        s.methods = vec![Method::PerturbModified];
        assert!(s.validate().is_err(), "asymmetric law with a bounded score");
        let mut s = small(ErrorLaw::ScaledT { df: 2.0 });
        assert!(s.validate().is_err());
        s.errors = ErrorLaw::ScaledT { df: 5.0 };
        s.b = 50;
        assert!(s.validate().is_err());
    }

    #[test]
    fn report_shapes_and_reproducibility() {
        let s = small(ErrorLaw::CenteredExponential { rate: 1.0 });
        let a = run_scenario(&s, &BootOptions::default()).unwrap();
        assert!(!a.partial);
        assert_eq!(a.methods.len(), 6);
        for m in &a.methods {
            let d = m.sup_distance.unwrap();
            assert!((0.0..=1.0).contains(&d));
            assert!((0.0..=1.0).contains(&m.coverage));
            assert_eq!(m.outcomes.len(), 6);
        }
        let b = run_scenario(&s, &BootOptions { threads: Some(2), ..Default::default() }).unwrap();
        for (x, y) in a.methods.iter().zip(&b.methods) {
            assert_eq!(x.sup_distance, y.sup_distance);
            assert_eq!(x.coverage, y.coverage);
        }
        assert!(a.paired_gap(Method::PerturbNaive, Method::PerturbModified).is_some());
        assert_eq!(a.csv_rows().len(), 36);
    }

    #[test]
    fn bivariate_scenario_uses_rectangles() {
        let mut s = small(ErrorLaw::Normal { sigma: 1.0 });
        s.p = 2;
        s.design = DesignSpec::Example31Gaussian { intercept: true };
        s.methods = vec![Method::NormalApprox, Method::PerturbModified];
        let r = run_scenario(&s, &BootOptions::default()).unwrap();
        assert!(r.method(Method::PerturbModified).unwrap().sup_distance.unwrap() > 0.0);
    }

    #[test]
    fn hetero_sigmas_follow_rule() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 1.5]);
        let s = ErrorLaw::Hetero { base: 0.5, slope: 1.0 }.sigmas(&x);
        assert_eq!(s, vec![1.5, 2.5, 2.0]);
    }
}
