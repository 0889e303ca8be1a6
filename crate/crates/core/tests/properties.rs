//! Property tests against independent oracles: Householder QR for least
//! squares, scalar bisection for robust location, and algebraic invariances
//! of the perturbation replicate.

use nalgebra::{DMatrix, DVector};
use pertboot::boot::{perturb_replicate, pivots_from_replicate, BootOptions, PivotKind};
use pertboot::mest::{m_estimate, RegressionData, SolverOptions};
use pertboot::perturb::{make_scaled_beta_half, WeightScheme};
use pertboot::score::{make_least_squares, make_smooth_huber, ScoreFunction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_problem(seed: u64, n: usize, p: usize) -> RegressionData {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { r.sample(StandardNormal) });
    let y = DVector::from_fn(n, |i, _| x.row(i).sum() + r.sample::<f64, _>(StandardNormal));
    RegressionData::new(x, y).unwrap()
}

/// Least squares through Householder QR of X, never forming X′X.
fn qr_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).unwrap()
}

/// Root of Σψ(yᵢ − b) = 0 by bisection; the sum is decreasing in b.
fn bisection_location(y: &[f64], score: &ScoreFunction) -> f64 {
    let f = |b: f64| y.iter().map(|v| score.eval(v - b)).sum::<f64>();
    let (mut lo, mut hi) = (y.iter().cloned().fold(f64::INFINITY, f64::min), y.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn least_squares_matches_qr(seed in any::<u64>(), p in 1usize..=5, extra in 5usize..=45) {
        let n = (p + extra).min(50);
        let data = gaussian_problem(seed, n, p);
        let fit = m_estimate(&data, &make_least_squares(), &SolverOptions::default()).unwrap();
        let oracle = qr_oracle(data.x(), data.y());
        prop_assert!(rel_err(&fit.beta_bar, &oracle) < 1e-10);
    }

    #[test]
    fn pseudo_huber_location_matches_bisection(seed in any::<u64>(), n in 5usize..=60, c in 0.5f64..3.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal) * 2.0 + 1.0).collect();
        let data = RegressionData::new(DMatrix::from_element(n, 1, 1.0), DVector::from_vec(y.clone())).unwrap();
        let score = make_smooth_huber(c).unwrap();
        let fit = m_estimate(&data, &score, &SolverOptions::default()).unwrap();
        let b = bisection_location(&y, &score);
        prop_assert!((fit.beta_bar[0] - b).abs() <= 1e-8 * b.abs().max(1.0));
    }

    #[test]
    fn perturbed_least_squares_matches_weighted_qr(seed in any::<u64>(), p in 1usize..=4) {
        let data = gaussian_problem(seed, 40, p);
        let fit = m_estimate(&data, &make_least_squares(), &SolverOptions::default()).unwrap();
        let scheme = make_scaled_beta_half(4.0).unwrap();
        let w = scheme.draw_weights(40, seed, 0, 0);
        let beta = perturb_replicate(&data, &make_least_squares(), &fit, &w, &BootOptions::default());
        // a far replicate may leave the trust region; nothing to compare then
        if let Ok(beta) = beta {
            let sw: Vec<f64> = w.iter().map(|g| g.sqrt()).collect();
            let xw = DMatrix::from_fn(40, p, |i, j| data.x()[(i, j)] * sw[i]);
            let yw = DVector::from_fn(40, |i, _| data.y()[i] * sw[i]);
            prop_assert!(rel_err(&beta, &qr_oracle(&xw, &yw)) < 1e-10);
        }
    }

    #[test]
    fn weight_rescaling_leaves_replicate_and_htilde_unchanged(seed in any::<u64>(), c in 0.1f64..10.0) {
        let data = gaussian_problem(seed, 50, 2);
        let score = make_smooth_huber(1.345).unwrap();
        let fit = m_estimate(&data, &score, &SolverOptions::default()).unwrap();
        let base = make_scaled_beta_half(4.0).unwrap();
        let scaled = make_scaled_beta_half(4.0 * c).unwrap();
        let w = base.draw_weights(50, seed, 0, 0);
        let wc: Vec<f64> = w.iter().map(|g| g * c).collect();
        let opts = BootOptions::default();
        let (Ok(b1), Ok(b2)) = (perturb_replicate(&data, &score, &fit, &w, &opts), perturb_replicate(&data, &score, &fit, &wc, &opts)) else {
            return Ok(());
        };
        prop_assert!((&b1 - &b2).amax() <= 1e-12 * b1.amax().max(1.0));
        let h1 = pivots_from_replicate(&data, &fit, &b1, &w, base.mu(), &[PivotKind::Htilde]).unwrap();
        let h2 = pivots_from_replicate(&data, &fit, &b2, &wc, scaled.mu(), &[PivotKind::Htilde]).unwrap();
        prop_assert!((&h1[0] - &h2[0]).amax() <= 1e-10 * h1[0].amax().max(1.0));
    }

    #[test]
    fn constant_weights_return_the_fit(seed in any::<u64>(), mu in prop::sample::select(vec![0.25, 1.0, 3.0])) {
        let data = gaussian_problem(seed, 30, 3);
        for score in [make_least_squares(), make_smooth_huber(1.0).unwrap()] {
            let fit = m_estimate(&data, &score, &SolverOptions::default()).unwrap();
            let w = vec![mu; 30];
            let b = perturb_replicate(&data, &score, &fit, &w, &BootOptions::default()).unwrap();
            prop_assert_eq!(&b, &fit.beta_bar);
            let piv = pivots_from_replicate(&data, &fit, &b, &w, mu, &PivotKind::ALL).unwrap();
            prop_assert!(piv.iter().all(|v| v.iter().all(|&t| t == 0.0)));
        }
    }
}

#[test]
fn custom_scheme_mean_enters_the_modified_pivot() {
    // shifting μ away from the weights' mean must change H̃* but not β*
    let data = gaussian_problem(3, 60, 2);
    let fit = m_estimate(&data, &make_least_squares(), &SolverOptions::default()).unwrap();
    let scheme = WeightScheme::custom("unit", 1.0, |r| 0.5 + r.random::<f64>()).unwrap();
    let w = scheme.draw_weights(60, 9, 0, 0);
    let b = perturb_replicate(&data, &make_least_squares(), &fit, &w, &BootOptions::default()).unwrap();
    let a = pivots_from_replicate(&data, &fit, &b, &w, 1.0, &[PivotKind::Htilde]).unwrap();
    let c = pivots_from_replicate(&data, &fit, &b, &w, 1.2, &[PivotKind::Htilde]).unwrap();
    assert!((&a[0] - &c[0]).amax() > 1e-6);
}
