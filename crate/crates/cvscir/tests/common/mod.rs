#![allow(dead_code)]

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub use cvscir::stats::{mean, mean_stderr, variance, variance_stderr};

/// |empirical - expected| in units of `se`.
pub fn z_score(empirical: f64, expected: f64, se: f64) -> f64 {
    (empirical - expected).abs() / se
}

/// Mean and variance checks at 3 standard errors, as (mean ok, variance ok).
pub fn moments_within_3se(xs: &[f64], mean_expected: f64, var_expected: f64) -> (bool, bool) {
    let zm = z_score(mean(xs), mean_expected, mean_stderr(xs));
    let zv = z_score(variance(xs), var_expected, variance_stderr(xs));
    (zm < 3.0, zv < 3.0)
}

/// Upper-tail p-value of Pearson's statistic; cells with expected count
/// below 5 are pooled into one.
pub fn chi_squared_p(observed: &[u64], probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let n = n as f64;
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = n * p;
        if e < 5.0 {
            pooled_o += o as f64;
            pooled_e += e;
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    if pooled_e > 0.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e.max(1e-300);
        cells += 1;
    }
    assert!(cells >= 2, "too few cells for a chi-squared test");
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Whether the samples are indistinguishable by two-sample KS at level 0.001.
pub fn ks_accepts(x: &[f64], y: &[f64]) -> bool {
    let (n, m) = (x.len() as f64, y.len() as f64);
    ks_statistic(x, y) < 1.949 * ((n + m) / (n * m)).sqrt()
}

/// One-sample KS against a CDF at level 0.001.
pub fn ks_accepts_cdf(x: &[f64], cdf: impl Fn(f64) -> f64) -> bool {
    let mut a = x.to_vec();
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let d = a
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    d < 1.949 / n.sqrt()
}
