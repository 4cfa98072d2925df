//! Closed-form moments and moment-generating functions of the CIR-type chains.
//!
//! For a frozen noise sequence (â_m, b̂_m) each step has the form
//! θ_{m} = (κ_m/2)·χ²(2â_m, 2θ_{m-1}ρ_m/κ_m), whose MGF given θ_{m-1} is
//! (1 - sκ_m)^{-â_m} exp(θ_{m-1} r_m(s)) with r_m(s) = sρ_m/(1 - sκ_m).
//! Composing backwards from the last step gives the MGF of θ_M.

mod hypergeo;
mod moments;

pub use hypergeo::{
    hypergeo_mgf, hypergeo_mgf_series, hypergeo_variance, ln_mgf_z_direct, ln_mgf_z_series, MinibatchLaw,
};
pub use moments::{
    a_hat_expectations, approx_moments, asymptotic_bias, baker_variance, corollary1_moments, corollary_a2_moments,
    exact_cir_moments, main_constants, unconditional_moments, AHatExpectations, ApproxMoments, ExpectationConfig,
    ExpectationMode, MomentReport, StepLaw,
};

use crate::error::{domain, Error, Result};
use crate::samplers::alt_coefficients;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parametrization {
    /// b̂ scales the transition; the decay stays e^{-h}.
    Main,
    /// b̂ also sets the decay e^{-b̂h}.
    Alternative,
}

impl Parametrization {
    pub fn name(self) -> &'static str {
        match self {
            Parametrization::Main => "main",
            Parametrization::Alternative => "alt",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSequence {
    pub a_hats: Vec<f64>,
    pub b_hats: Vec<f64>,
    pub h: f64,
    pub theta0: f64,
}

impl NoiseSequence {
    pub fn new(a_hats: Vec<f64>, b_hats: Vec<f64>, h: f64, theta0: f64) -> Result<Self> {
        if a_hats.len() != b_hats.len() || a_hats.is_empty() {
            return Err(domain("noise sequences must be non-empty and of equal length"));
        }
        if a_hats.iter().any(|&a| !(a > 0.0)) {
            return Err(domain("every â must be positive"));
        }
        if !(h > 0.0) || !(theta0 >= 0.0) {
            return Err(domain("need h > 0 and theta0 >= 0"));
        }
        Ok(NoiseSequence { a_hats, b_hats, h, theta0 })
    }

    pub fn len(&self) -> usize {
        self.a_hats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_hats.is_empty()
    }

    /// Per-step (κ_m, ρ_m).
    pub fn coefficients(&self, param: Parametrization) -> Result<Vec<(f64, f64)>> {
        let h = self.h;
        self.b_hats
            .iter()
            .map(|&b| match param {
                Parametrization::Main => {
                    if b > 0.0 {
                        Ok((-(-h).exp_m1() / b, (-h).exp()))
                    } else {
                        Err(domain(format!("main parametrization needs b̂ > 0, got {b}")))
                    }
                }
                Parametrization::Alternative => Ok(alt_coefficients(b, h)),
            })
            .collect()
    }

    /// E[θ_M] and Var[θ_M] given this noise.
    pub fn conditional_moments(&self, param: Parametrization) -> Result<(f64, f64)> {
        let mut mean = self.theta0;
        let mut var = 0.0;
        for ((kappa, rho), &a) in self.coefficients(param)?.into_iter().zip(&self.a_hats) {
            var = rho * rho * var + kappa * kappa * a + 2.0 * kappa * rho * mean;
            mean = rho * mean + kappa * a;
        }
        Ok((mean, var))
    }
}

fn divergence(s: f64, step: usize) -> Error {
    Error::Divergence(format!("s = {s} makes the transform infinite at step {}", step + 1))
}

/// ln M_{θ_M}(s) by the backward recursion: u ← s, then for m = M..1
/// accumulate -â_m ln(1 - uκ_m) and set u ← r_m(u); finally add θ₀u.
pub fn ln_mgf(noise: &NoiseSequence, param: Parametrization, s: f64) -> Result<f64> {
    let coeffs = noise.coefficients(param)?;
    let mut u = s;
    let mut log = 0.0;
    for (m, (&(kappa, rho), &a)) in coeffs.iter().zip(&noise.a_hats).enumerate().rev() {
        let base = 1.0 - u * kappa;
        if !(base > 0.0) {
            return Err(divergence(s, m));
        }
        log -= a * (-u * kappa).ln_1p();
        u = u * rho / base;
    }
    Ok(log + noise.theta0 * u)
}

/// ln M_{θ_M}(s) through the closed product form with
/// D^R(s) = 1 - s Σ_{l=1}^R κ_{M-l+1} Π_{j=M-l+2}^M ρ_j.
pub fn ln_mgf_closed_form(noise: &NoiseSequence, param: Parametrization, s: f64) -> Result<f64> {
    let coeffs = noise.coefficients(param)?;
    let m = coeffs.len();
    // d[r] = D^r(s) and ln_d[r] = ln D^r(s), built from the last step backwards.
    let mut d = Vec::with_capacity(m + 1);
    let mut ln_d = Vec::with_capacity(m + 1);
    d.push(1.0);
    ln_d.push(0.0);
    let mut tail_decay = 1.0;
    let mut sum = 0.0;
    for &(kappa, rho) in coeffs.iter().rev() {
        sum += kappa * tail_decay;
        tail_decay *= rho;
        let dr = 1.0 - s * sum;
        if !(dr > 0.0) {
            return Err(divergence(s, m - d.len()));
        }
        d.push(dr);
        ln_d.push((-s * sum).ln_1p());
    }
    let mut log = noise.theta0 * s * tail_decay / d[m];
    for (idx, &a) in noise.a_hats.iter().enumerate() {
        let r = m - idx;
        log -= a * (ln_d[r] - ln_d[r - 1]);
    }
    Ok(log)
}

/// MGF of θ_M for the main parametrization, frozen noise.
pub fn mgf_theorem1(noise: &NoiseSequence, s: f64) -> Result<f64> {
    ln_mgf(noise, Parametrization::Main, s).map(f64::exp)
}

/// MGF of θ_M for the alternative parametrization, frozen noise.
pub fn mgf_theorem_a2(noise: &NoiseSequence, s: f64) -> Result<f64> {
    ln_mgf(noise, Parametrization::Alternative, s).map(f64::exp)
}

/// Largest s at which every D^R(s) is still positive (κ > 0, so D^M binds).
pub fn mgf_domain_upper(noise: &NoiseSequence, param: Parametrization) -> Result<f64> {
    let coeffs = noise.coefficients(param)?;
    let mut tail_decay = 1.0;
    let mut sum: f64 = 0.0;
    let mut sup = f64::INFINITY;
    for &(kappa, rho) in coeffs.iter().rev() {
        sum += kappa * tail_decay;
        tail_decay *= rho;
        if sum > 0.0 {
            sup = sup.min(1.0 / sum);
        }
    }
    Ok(sup)
}
