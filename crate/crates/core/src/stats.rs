//! Summary statistics and distribution distances used by the Monte Carlo harness.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

pub fn median(v: &[f64]) -> f64 {
    let s = sorted(v);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Large-sample standard error of a median, √(π/2)·sd/√K.
pub fn median_se(v: &[f64]) -> f64 {
    (std::f64::consts::PI / 2.0).sqrt() * sd(v) / (v.len() as f64).sqrt()
}

/// sup |F_a − F_b| for two sorted samples.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// sup |F_a − Φ| for a sorted sample.
pub fn ks_vs_normal(a: &[f64]) -> f64 {
    let nd = Normal::standard();
    let n = a.len() as f64;
    a.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = nd.cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Cell probabilities of a bivariate sample on a grid of cut points.
fn cell_probs(xs: &[f64], ys: &[f64], cx: &[f64], cy: &[f64]) -> Vec<Vec<f64>> {
    let mut cells = vec![vec![0.0; cy.len() + 1]; cx.len() + 1];
    let w = 1.0 / xs.len() as f64;
    for (x, y) in xs.iter().zip(ys) {
        let i = cx.partition_point(|c| c < x);
        let j = cy.partition_point(|c| c < y);
        cells[i][j] += w;
    }
    cells
}

fn normal_cell_probs(cx: &[f64], cy: &[f64]) -> Vec<Vec<f64>> {
    let nd = Normal::standard();
    let edges = |c: &[f64]| {
        let mut e = vec![0.0];
        e.extend(c.iter().map(|&v| nd.cdf(v)));
        e.push(1.0);
        e.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()
    };
    let (px, py) = (edges(cx), edges(cy));
    px.iter().map(|a| py.iter().map(|b| a * b).collect()).collect()
}

/// Largest |P_a(R) − P_b(R)| over axis-aligned rectangles whose sides lie on
/// the cut points (or ±∞).
fn rect_sup_from_cells(diff: &[Vec<f64>]) -> f64 {
    let (gx, gy) = (diff.len(), diff[0].len());
    // prefix[i][j] = Σ diff[<i][<j]
    let mut prefix = vec![vec![0.0; gy + 1]; gx + 1];
    for i in 0..gx {
        for j in 0..gy {
            prefix[i + 1][j + 1] = diff[i][j] + prefix[i][j + 1] + prefix[i + 1][j] - prefix[i][j];
        }
    }
    let mut best: f64 = 0.0;
    for i1 in 0..gx {
        for i2 in (i1 + 1)..=gx {
            for j1 in 0..gy {
                for j2 in (j1 + 1)..=gy {
                    let s = prefix[i2][j2] - prefix[i1][j2] - prefix[i2][j1] + prefix[i1][j1];
                    best = best.max(s.abs());
                }
            }
        }
    }
    best
}

/// Rectangle sup-distance between two bivariate samples on the given cuts.
pub fn rect_distance(a: (&[f64], &[f64]), b: (&[f64], &[f64]), cx: &[f64], cy: &[f64]) -> f64 {
    let pa = cell_probs(a.0, a.1, cx, cy);
    let pb = cell_probs(b.0, b.1, cx, cy);
    let diff: Vec<Vec<f64>> = pa.iter().zip(&pb).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u - v).collect()).collect();
    rect_sup_from_cells(&diff)
}

/// Rectangle sup-distance between a bivariate sample and N(0, I₂).
pub fn rect_distance_normal(a: (&[f64], &[f64]), cx: &[f64], cy: &[f64]) -> f64 {
    let pa = cell_probs(a.0, a.1, cx, cy);
    let pn = normal_cell_probs(cx, cy);
    let diff: Vec<Vec<f64>> = pa.iter().zip(&pn).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u - v).collect()).collect();
    rect_sup_from_cells(&diff)
}

/// Average ranks (ties share the mean rank).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Spearman rank correlation and its two-sided p-value (t approximation).
pub fn spearman(a: &[f64], b: &[f64]) -> (f64, f64) {
    let rho = pearson(&ranks(a), &ranks(b));
    let n = a.len() as f64;
    if n < 3.0 || rho.abs() >= 1.0 {
        return (rho, if rho.abs() >= 1.0 { 0.0 } else { 1.0 });
    }
    let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 2.0).expect("df > 0");
    (rho, 2.0 * (1.0 - dist.cdf(t.abs())))
}
