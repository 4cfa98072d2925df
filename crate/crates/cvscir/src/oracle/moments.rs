//! Mean and variance of θ_M for the exact, Baker and control-variate chains.

use super::hypergeo::{hypergeo_mgf, hypergeo_variance, MinibatchLaw};
use super::Parametrization;
use crate::error::{domain, Result};
use crate::rng::RngStream;

fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// (1 - e^{-hb})/b, continuous at b = 0.
fn decay_ratio(b: f64, h: f64) -> f64 {
    if b == 0.0 {
        h
    } else {
        one_minus_exp_neg(b * h) / b
    }
}

/// How E[φ(â)] is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExpectationMode {
    /// Exact summation when the support has at most 10⁴ points, else Monte Carlo.
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpectationConfig {
    pub mode: ExpectationMode,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for ExpectationConfig {
    fn default() -> Self {
        ExpectationConfig { mode: ExpectationMode::Auto, mc_draws: 1000, seed: 0 }
    }
}

impl ExpectationConfig {
    pub fn exact() -> Self {
        ExpectationConfig { mode: ExpectationMode::Exact, ..Default::default() }
    }

    pub fn monte_carlo(mc_draws: usize, seed: u64) -> Self {
        ExpectationConfig { mode: ExpectationMode::MonteCarlo, mc_draws, seed }
    }
}

const EXACT_SUPPORT_LIMIT: u64 = 10_000;

/// Expectations of several functions of â under one law.
#[derive(Clone, Debug, PartialEq)]
pub struct AHatExpectations {
    pub values: Vec<f64>,
    /// Monte Carlo standard errors; zero for exact summation.
    pub stderr: Vec<f64>,
    /// Support points or draws with â = 1, which are left out.
    pub excluded: u64,
    pub exact: bool,
}

fn is_unit(a_hat: f64) -> bool {
    (a_hat - 1.0).abs() < 1e-12
}

pub fn a_hat_expectations(
    law: &MinibatchLaw,
    cfg: &ExpectationConfig,
    fs: &[&dyn Fn(f64) -> f64],
) -> Result<AHatExpectations> {
    let exact = match cfg.mode {
        ExpectationMode::Exact => true,
        ExpectationMode::MonteCarlo => false,
        ExpectationMode::Auto => law.support_size() <= EXACT_SUPPORT_LIMIT,
    };
    let mut excluded = 0;
    if exact {
        let mut values = vec![0.0; fs.len()];
        let mut mass = 0.0;
        for (a_hat, p) in law.a_hat_distribution() {
            if is_unit(a_hat) {
                excluded += 1;
                continue;
            }
            mass += p;
            for (v, f) in values.iter_mut().zip(fs) {
                *v += p * f(a_hat);
            }
        }
        if mass == 0.0 {
            return Err(domain("every support point has â = 1"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        return Ok(AHatExpectations { stderr: vec![0.0; fs.len()], values, excluded, exact });
    }
    if cfg.mc_draws < 2 {
        return Err(domain("Monte Carlo expectations need at least two draws"));
    }
    let sampler = law.sampler();
    let mut stream = RngStream::new(cfg.seed, 0x6578_7065_6374);
    let mut sum = vec![0.0; fs.len()];
    let mut sum_sq = vec![0.0; fs.len()];
    let mut used = 0usize;
    for _ in 0..cfg.mc_draws {
        let a_hat = law.sample_a_hat(&sampler, &mut stream);
        if is_unit(a_hat) {
            excluded += 1;
            continue;
        }
        used += 1;
        for (j, f) in fs.iter().enumerate() {
            let v = f(a_hat);
            sum[j] += v;
            sum_sq[j] += v * v;
        }
    }
    if used < 2 {
        return Err(domain("too few usable Monte Carlo draws"));
    }
    let n = used as f64;
    let values: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = values
        .iter()
        .zip(&sum_sq)
        .map(|(m, s2)| ((s2 / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok(AHatExpectations { values, stderr, excluded, exact })
}

/// Moments of θ_M for the exact CIR chain with shape a.
pub fn exact_cir_moments(theta0: f64, a: f64, h: f64, m: u32) -> (f64, f64) {
    let e = (-(m as f64) * h).exp();
    let mean = theta0 * e + a * (1.0 - e);
    let var = 2.0 * theta0 * (e - e * e) + a * (1.0 - e).powi(2);
    (mean, var)
}

/// Variance of θ_M for SCIR with iid â of variance `var_a_hat`.
pub fn baker_variance(var_a_hat: f64, a: f64, theta0: f64, h: f64, m: u32) -> f64 {
    let (_, var) = exact_cir_moments(theta0, a, h, m);
    let e = (-h).exp();
    var + one_minus_exp_neg(2.0 * m as f64 * h) * (1.0 - e) / (1.0 + e) * var_a_hat
}

/// The three constants of the main-parametrization variance.
pub fn main_constants(h: f64, m: u32) -> (f64, f64, f64) {
    let mf = m as f64;
    let e = (-h).exp();
    let e2 = (-2.0 * h).exp();
    let em = (-mf * h).exp();
    let e2m = (-2.0 * mf * h).exp();
    let q = one_minus_exp_neg(h);
    let c1 = em - e2m;
    let c2 = q * q * one_minus_exp_neg(2.0 * mf * h) / one_minus_exp_neg(2.0 * h);
    let c3 = q * q * ((em - e) / (q * (e - 1.0)) - (e2m - e2) / (q * (e2 - 1.0)));
    (c1, c2, c3)
}

/// Second-order expansion of the moments in σ²(a) = Var[â]/(a-1)².
pub fn approx_moments(sigma2_a: f64, a: f64, theta0: f64, h: f64, m: u32) -> ApproxMoments {
    let (mean, var) = exact_cir_moments(theta0, a, h, m);
    let (_, c2, c3) = main_constants(h, m);
    let q = one_minus_exp_neg(m as f64 * h);
    let b1 = var + q * q + c2;
    let b2 = 2.0 * c3;
    ApproxMoments {
        mean: mean + q * sigma2_a,
        variance: var + b1 * sigma2_a + b2 * sigma2_a * sigma2_a,
        b1,
        b2,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApproxMoments {
    pub mean: f64,
    pub variance: f64,
    pub b1: f64,
    pub b2: f64,
}

/// Long-run bias of the running mean.
pub fn asymptotic_bias(sigma2_a: f64, param: Parametrization, h: f64) -> f64 {
    match param {
        Parametrization::Main => sigma2_a,
        Parametrization::Alternative => {
            let e = (-h).exp();
            (1.0 - e * (1.0 + h)) / (1.0 - e * (1.0 + 0.5 * h * h * sigma2_a)) * sigma2_a
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport {
    pub parametrization: Parametrization,
    pub m: u32,
    pub mean: f64,
    pub variance: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub approx_mean: f64,
    pub approx_variance: f64,
    pub b1: f64,
    pub b2: f64,
    pub sigma2_a: f64,
    pub exact_mean: f64,
    pub exact_variance: f64,
    pub baker_variance: f64,
    pub excluded_draws: u64,
    pub exact_expectations: bool,
    /// Standard errors of the expectations behind `mean` and `variance`.
    pub expectation_stderr: Vec<f64>,
    /// P(â ≤ 1), i.e. P(b̂ ≤ 0). The main-parametrization formulas assume b̂ > 0
    /// and are only meaningful when this is negligible.
    pub nonpositive_rate_mass: f64,
}

fn require_interior_mode(law: &MinibatchLaw) -> Result<f64> {
    let a = law.a();
    if a > 1.0 {
        Ok(a)
    } else {
        Err(domain(format!("the control-variate moments need a > 1, got a = {a}")))
    }
}

fn base_report(law: &MinibatchLaw, param: Parametrization, theta0: f64, h: f64, m: u32) -> MomentReport {
    let a = law.a();
    let var_a_hat = hypergeo_variance(law);
    let sigma2_a = var_a_hat / (a - 1.0).powi(2);
    let approx = approx_moments(sigma2_a, a, theta0, h, m);
    let (exact_mean, exact_variance) = exact_cir_moments(theta0, a, h, m);
    MomentReport {
        parametrization: param,
        m,
        mean: f64::NAN,
        variance: f64::NAN,
        c1: f64::NAN,
        c2: f64::NAN,
        c3: f64::NAN,
        approx_mean: approx.mean,
        approx_variance: approx.variance,
        b1: approx.b1,
        b2: approx.b2,
        sigma2_a,
        exact_mean,
        exact_variance,
        baker_variance: baker_variance(var_a_hat, a, theta0, h, m),
        excluded_draws: 0,
        exact_expectations: true,
        expectation_stderr: Vec::new(),
        nonpositive_rate_mass: law.a_hat_distribution().iter().filter(|(x, _)| *x <= 1.0).map(|(_, p)| p).sum(),
    }
}

/// Mean and variance of the main-parametrization chain, averaged over the
/// subsampling noise (the variance is E[Var(θ_M | noise)]).
pub fn corollary1_moments(
    law: &MinibatchLaw,
    theta0: f64,
    h: f64,
    m: u32,
    cfg: &ExpectationConfig,
) -> Result<MomentReport> {
    let a = require_interior_mode(law)?;
    let ex = a_hat_expectations(
        law,
        cfg,
        &[&|x| x / (x - 1.0), &|x| 1.0 / (x - 1.0), &|x| x / (x - 1.0).powi(2)],
    )?;
    let (e1, e2, e3) = (ex.values[0], ex.values[1], ex.values[2]);
    let (c1, c2, c3) = main_constants(h, m);
    let em = (-(m as f64) * h).exp();
    let mut r = base_report(law, Parametrization::Main, theta0, h, m);
    r.mean = theta0 * em + (1.0 - em) * (a - 1.0) * e1;
    r.variance = 2.0 * (a - 1.0) * e2 * (theta0 * c1 + c3 * (a - 1.0) * e1) + c2 * (a - 1.0).powi(2) * e3;
    (r.c1, r.c2, r.c3) = (c1, c2, c3);
    r.excluded_draws = ex.excluded;
    r.exact_expectations = ex.exact;
    r.expectation_stderr = ex.stderr;
    Ok(r)
}

/// The alternative-parametrization analogue of [`corollary1_moments`].
pub fn corollary_a2_moments(
    law: &MinibatchLaw,
    theta0: f64,
    h: f64,
    m: u32,
    cfg: &ExpectationConfig,
) -> Result<MomentReport> {
    let a = require_interior_mode(law)?;
    let b = |x: f64| (x - 1.0) / (a - 1.0);
    let ex = a_hat_expectations(
        law,
        cfg,
        &[
            &|x| x * decay_ratio(b(x), h),
            &|x| {
                let bx = b(x);
                (-h * bx).exp() * decay_ratio(bx, h)
            },
            &|x| x * decay_ratio(b(x), h).powi(2),
        ],
    )?;
    // (e^{-hb} - e^{-2hb})/b = e^{-hb}(1 - e^{-hb})/b.
    let (ea, eb, ec) = (ex.values[0], ex.values[1], ex.values[2]);
    let t = -h / (a - 1.0);
    let x = (-t).exp() * hypergeo_mgf(law, t);
    let y = (-2.0 * t).exp() * hypergeo_mgf(law, 2.0 * t);
    let mi = m as i32;
    let (xm, ym) = (x.powi(mi), y.powi(mi));
    let c1 = (xm - ym) / (x - y);
    let c2 = (1.0 - ym) / (1.0 - y);
    let c3 = 1.0 + x + y + (xm - x.powi(3)) / ((x - y) * (x - 1.0)) - (ym - y.powi(3)) / ((x - y) * (y - 1.0));
    let mut r = base_report(law, Parametrization::Alternative, theta0, h, m);
    r.mean = theta0 * xm + (1.0 - xm) / (1.0 - x) * ea;
    r.variance = 2.0 * eb * (theta0 * c1 + ea * c3) + ec * c2;
    (r.c1, r.c2, r.c3) = (c1, c2, c3);
    r.excluded_draws = ex.excluded;
    r.exact_expectations = ex.exact;
    r.expectation_stderr = ex.stderr;
    Ok(r)
}

/// Which per-step law the unconditional recursion follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepLaw {
    /// SCIR: κ = 1 - e^{-h}, ρ = e^{-h}.
    Baker,
    Control(Parametrization),
}

/// Total mean and variance of θ_M with a fresh iid â each step.
///
/// Unlike the corollaries this includes the spread of the conditional mean
/// across noise sequences, so it is the quantity a simulation of independent
/// chains measures. Uses E[θ'|θ,â] = ρθ + κâ and Var[θ'|θ,â] = κ²â + 2κρθ.
pub fn unconditional_moments(
    law: &MinibatchLaw,
    step: StepLaw,
    theta0: f64,
    h: f64,
    m: u32,
    cfg: &ExpectationConfig,
) -> Result<(f64, f64)> {
    let a = law.a();
    let coeffs = move |x: f64| -> (f64, f64) {
        match step {
            StepLaw::Baker => (one_minus_exp_neg(h), (-h).exp()),
            StepLaw::Control(Parametrization::Main) => (one_minus_exp_neg(h) * (a - 1.0) / (x - 1.0), (-h).exp()),
            StepLaw::Control(Parametrization::Alternative) => {
                let b = (x - 1.0) / (a - 1.0);
                (decay_ratio(b, h), (-b * h).exp())
            }
        }
    };
    if matches!(step, StepLaw::Control(_)) {
        require_interior_mode(law)?;
    }
    let ex = a_hat_expectations(
        law,
        cfg,
        &[
            &|x| coeffs(x).0 * x,
            &|x| coeffs(x).1,
            &|x| coeffs(x).0.powi(2) * x,
            &|x| coeffs(x).0 * coeffs(x).1,
            &|x| coeffs(x).1.powi(2),
            &|x| coeffs(x).0 * coeffs(x).1 * x,
            &|x| (coeffs(x).0 * x).powi(2),
        ],
    )?;
    let [k_a, r, k2_a, kr, r2, kr_a, k2_a2] = ex.values[..] else { unreachable!() };
    let (mut m1, mut m2) = (theta0, theta0 * theta0);
    for _ in 0..m {
        let next1 = k_a + r * m1;
        let next2 = k2_a + 2.0 * kr * m1 + r2 * m2 + 2.0 * kr_a * m1 + k2_a2;
        (m1, m2) = (next1, next2);
    }
    Ok((m1, m2 - m1 * m1))
}
