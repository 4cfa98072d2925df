mod common;

use common::*;
use cvscir::oracle::*;
use cvscir::rng::RngStream;
use cvscir::samplers::{cv_scir_step_alt, cv_scir_step_main};
use cvscir::Error;
use proptest::prelude::*;
use statrs::function::factorial::ln_binomial;

fn sparse_law() -> MinibatchLaw {
    MinibatchLaw::from_fraction(1000, 0.15, 100, 0.1).unwrap()
}

const THETA0: f64 = 7.67;
const H: f64 = 0.1;

fn rel(x: f64, y: f64) -> f64 {
    (x - y).abs() / y.abs().max(1e-300)
}

fn sample_noise(seed: u64, m: usize) -> NoiseSequence {
    let mut s = RngStream::new(seed, 0);
    let a: Vec<f64> = (0..m).map(|_| 0.2 + 20.0 * s.uniform()).collect();
    let b: Vec<f64> = (0..m).map(|_| 0.3 + 2.0 * s.uniform()).collect();
    NoiseSequence::new(a, b, 0.05 + s.uniform(), 10.0 * s.uniform()).unwrap()
}

#[test]
fn mgf_is_one_at_zero() {
    let noise = sample_noise(1, 7);
    assert_eq!(mgf_theorem1(&noise, 0.0).unwrap(), 1.0);
    assert_eq!(mgf_theorem_a2(&noise, 0.0).unwrap(), 1.0);
}

#[test]
fn single_unit_rate_step_matches_noncentral_chisq_mgf() {
    // θ₁ = cW with c = (1-e^{-h})/2, W ~ χ²(2a, 2θ₀e^{-h}/(1-e^{-h})).
    let (a, theta0, h) = (3.3, 2.5, 0.4);
    let noise = NoiseSequence::new(vec![a], vec![1.0], h, theta0).unwrap();
    let c = (1.0 - (-h).exp()) / 2.0;
    let nu = 2.0 * a;
    let mu = 2.0 * theta0 * (-h).exp() / (1.0 - (-h).exp());
    for s in [-3.0, -0.5, 0.1, 1.0, 2.0] {
        let sp = c * s;
        let direct = (mu * sp / (1.0 - 2.0 * sp)).exp() / (1.0 - 2.0 * sp).powf(nu / 2.0);
        assert!(rel(mgf_theorem1(&noise, s).unwrap(), direct) < 1e-13, "s={s}");
    }
}

#[test]
fn parametrizations_agree_at_unit_rate() {
    let mut noise = sample_noise(2, 9);
    noise.b_hats = vec![1.0; 9];
    for s in [-2.0, -0.1, 0.3, 1.0] {
        assert!(rel(mgf_theorem1(&noise, s).unwrap(), mgf_theorem_a2(&noise, s).unwrap()) < 1e-13);
    }
}

#[test]
fn outside_domain_is_a_divergence_error() {
    let noise = sample_noise(3, 5);
    for p in [Parametrization::Main, Parametrization::Alternative] {
        let sup = mgf_domain_upper(&noise, p).unwrap();
        assert!(ln_mgf(&noise, p, 0.999 * sup).is_ok());
        assert!(matches!(ln_mgf(&noise, p, 1.001 * sup), Err(Error::Divergence(_))));
        assert!(matches!(ln_mgf_closed_form(&noise, p, 1.001 * sup), Err(Error::Divergence(_))));
    }
}

/// Richardson-extrapolated central differences of the cumulant function at 0.
fn cumulant_derivatives(k: impl Fn(f64) -> f64, step: f64) -> (f64, f64) {
    let d1 = |e: f64| (k(e) - k(-e)) / (2.0 * e);
    let d2 = |e: f64| (k(e) - 2.0 * k(0.0) + k(-e)) / (e * e);
    let r1 = (4.0 * d1(step / 2.0) - d1(step)) / 3.0;
    let r2 = (4.0 * d2(step / 2.0) - d2(step)) / 3.0;
    (r1, r2)
}

#[test]
fn mgf_derivatives_reproduce_conditional_moments() {
    for seed in 0..20 {
        let noise = sample_noise(100 + seed, 1 + seed as usize % 10);
        for p in [Parametrization::Main, Parametrization::Alternative] {
            let (mean, var) = noise.conditional_moments(p).unwrap();
            let (k1, k2) = cumulant_derivatives(|s| ln_mgf(&noise, p, s).unwrap(), 1e-5);
            assert!(rel(k1, mean) < 1e-6, "seed {seed} {p:?}: {k1} vs {mean}");
            assert!(rel(k2, var) < 1e-6, "seed {seed} {p:?}: {k2} vs {var}");
        }
    }
}

#[test]
fn alt_handles_negative_and_zero_rates() {
    let noise = NoiseSequence::new(vec![2.0, 0.5, 3.0], vec![0.7, -0.4, 0.0], 0.2, 1.5).unwrap();
    assert!(noise.coefficients(Parametrization::Main).is_err());
    let (mean, var) = noise.conditional_moments(Parametrization::Alternative).unwrap();
    let (k1, k2) = cumulant_derivatives(|s| ln_mgf(&noise, Parametrization::Alternative, s).unwrap(), 1e-5);
    assert!(rel(k1, mean) < 1e-6 && rel(k2, var) < 1e-6);
}

#[test]
fn conditional_moments_match_frozen_noise_chains() {
    let noise = sample_noise(7, 6);
    let mut s = RngStream::new(7, 1);
    for p in [Parametrization::Main, Parametrization::Alternative] {
        let xs: Vec<f64> = (0..100_000)
            .map(|_| {
                let mut t = noise.theta0;
                for (&a, &b) in noise.a_hats.iter().zip(&noise.b_hats) {
                    t = match p {
                        Parametrization::Main => cv_scir_step_main(&mut s, t, a, b, noise.h),
                        Parametrization::Alternative => cv_scir_step_alt(&mut s, t, a, b, noise.h),
                    }
                    .unwrap();
                }
                t
            })
            .collect();
        let (mean, var) = noise.conditional_moments(p).unwrap();
        let (m_ok, v_ok) = moments_within_3se(&xs, mean, var);
        assert!(m_ok && v_ok, "{p:?}");
    }
}

#[test]
fn noise_free_collapse() {
    for (m, theta0, h) in [(1u32, 7.67, 0.1), (13, 0.0, 0.5), (100, 3.0, 0.02)] {
        let law = MinibatchLaw::new(1000, 150, 1000, 0.1).unwrap();
        let a = law.a();
        let (em, ev) = exact_cir_moments(theta0, a, h, m);
        let cfg = ExpectationConfig::default();
        let r1 = corollary1_moments(&law, theta0, h, m, &cfg).unwrap();
        let r2 = corollary_a2_moments(&law, theta0, h, m, &cfg).unwrap();
        for (x, y) in [(r1.mean, em), (r1.variance, ev), (r2.mean, em), (r2.variance, ev)] {
            assert!(rel(x, y) < 1e-12, "M={m}: {x} vs {y}");
        }
        let approx = approx_moments(0.0, a, theta0, h, m);
        assert_eq!((approx.mean, approx.variance), (em, ev));
        assert_eq!(baker_variance(0.0, a, theta0, h, m), ev);
        assert_eq!(hypergeo_variance(&law), 0.0);
        for step in [StepLaw::Baker, StepLaw::Control(Parametrization::Main), StepLaw::Control(Parametrization::Alternative)] {
            let (um, uv) = unconditional_moments(&law, step, theta0, h, m, &cfg).unwrap();
            assert!(rel(um, em) < 1e-12 && rel(uv, ev) < 1e-10, "{step:?}: {uv} vs {ev}");
        }
    }
}

#[test]
fn exact_cir_long_run_variance_is_shape() {
    let (_, v) = exact_cir_moments(THETA0, 150.1, H, 2000);
    assert!(rel(v, 150.1) < 1e-12);
}

/// The hypergeometric pmf of Z, independent of the library.
fn z_pmf(n_pop: u64, k: u64, n: u64) -> Vec<(u64, f64)> {
    let lo = n.saturating_sub(n_pop - k);
    (lo..=k.min(n))
        .map(|z| (z, (ln_binomial(k, z) + ln_binomial(n_pop - k, n - z) - ln_binomial(n_pop, n)).exp()))
        .collect()
}

#[test]
fn one_step_moments_average_the_step_law() {
    // M = 1: averaging Var[θ₁|â] = κ²â + 2κρθ₀ and E[θ₁|â] = ρθ₀ + κâ.
    let law = sparse_law();
    let a = law.a();
    let cfg = ExpectationConfig::exact();
    let pmf = z_pmf(1000, 150, 100);
    for p in [Parametrization::Main, Parametrization::Alternative] {
        let (mut mean, mut var) = (0.0, 0.0);
        for &(z, w) in &pmf {
            let a_hat = 0.1 + 10.0 * z as f64;
            let b = (a_hat - 1.0) / (a - 1.0);
            let (kappa, rho) = match p {
                Parametrization::Main => ((1.0 - (-H).exp()) / b, (-H).exp()),
                Parametrization::Alternative => ((1.0 - (-b * H).exp()) / b, (-b * H).exp()),
            };
            mean += w * (rho * THETA0 + kappa * a_hat);
            var += w * (kappa * kappa * a_hat + 2.0 * kappa * rho * THETA0);
        }
        let r = match p {
            Parametrization::Main => corollary1_moments(&law, THETA0, H, 1, &cfg),
            Parametrization::Alternative => corollary_a2_moments(&law, THETA0, H, 1, &cfg),
        }
        .unwrap();
        // Both sides carry the ~1e-12 rounding of the log-binomials at N = 1000.
        assert!(rel(r.mean, mean) < 1e-10, "{p:?} mean {} vs {mean}", r.mean);
        assert!(rel(r.variance, var) < 1e-10, "{p:?} var {} vs {var}", r.variance);
    }
}

#[test]
fn alternative_second_constant_is_one_at_first_step() {
    let r = corollary_a2_moments(&sparse_law(), THETA0, H, 1, &ExpectationConfig::exact()).unwrap();
    assert!((r.c2 - 1.0).abs() < 1e-12);
}

#[test]
fn main_constants_by_their_sums() {
    // C₁ = e^{-Mh} - e^{-2Mh}, C₂ = (1-e^{-h})² Σ_{j<M} e^{-2jh}. C₃ enters
    // only through the variance, which the one-step and collapse tests cover.
    for m in [1u32, 2, 5, 40] {
        let (c1, c2, _) = main_constants(H, m);
        let mf = m as f64;
        assert!(rel(c1, (-mf * H).exp() - (-2.0 * mf * H).exp()) < 1e-12);
        let q = 1.0 - (-H).exp();
        let sum: f64 = (0..m).map(|j| (-2.0 * j as f64 * H).exp()).sum();
        assert!(rel(c2, q * q * sum) < 1e-12);
    }
}

#[test]
fn main_variance_matches_recursion_with_deterministic_rate() {
    // With â fixed (n = N) but b̂ ≠ 1 the conditional recursion is the oracle
    // for every constant; the moment formula at b̂ = 1 is covered by the collapse.
    for m in [2u32, 5, 17] {
        let noise = NoiseSequence::new(vec![150.1; m as usize], vec![1.0; m as usize], H, THETA0).unwrap();
        let (mean, var) = noise.conditional_moments(Parametrization::Main).unwrap();
        let (em, ev) = exact_cir_moments(THETA0, 150.1, H, m);
        assert!(rel(mean, em) < 1e-12 && rel(var, ev) < 1e-12);
    }
}

#[test]
fn sparse_law_mean_by_independent_sum() {
    // E[θ_M] = θ₀e^{-Mh} + E[κâ] Σ_{j<M} e^{-jh} for iid â.
    let law = sparse_law();
    let a = law.a();
    let pmf = z_pmf(1000, 150, 100);
    let e_kappa_a: f64 = pmf
        .iter()
        .map(|&(z, w)| {
            let x = 0.1 + 10.0 * z as f64;
            w * (1.0 - (-H).exp()) * (a - 1.0) / (x - 1.0) * x
        })
        .sum();
    for m in [1u32, 5, 20, 100] {
        let r = corollary1_moments(&law, THETA0, H, m, &ExpectationConfig::exact()).unwrap();
        let geo: f64 = (0..m).map(|j| (-(j as f64) * H).exp()).sum();
        let expected = THETA0 * (-(m as f64) * H).exp() + e_kappa_a * geo;
        assert!(rel(r.mean, expected) < 1e-10);
    }
}

#[test]
fn approximations_track_moments_for_long_runs() {
    let law = sparse_law();
    let cfg = ExpectationConfig::default();
    for m in 20..=100u32 {
        let r = corollary1_moments(&law, THETA0, H, m, &cfg).unwrap();
        assert!(rel(r.approx_mean, r.mean) < 0.05, "M={m}");
        assert!(rel(r.approx_variance, r.variance) < 0.05, "M={m}");
    }
}

#[test]
fn approximation_mean_shift() {
    let law = sparse_law();
    let s2 = hypergeo_variance(&law) / (law.a() - 1.0).powi(2);
    assert!((s2 - 0.05167).abs() < 1e-5);
    for m in [1u32, 10, 100] {
        let a = approx_moments(s2, law.a(), THETA0, H, m);
        let (em, _) = exact_cir_moments(THETA0, law.a(), H, m);
        assert!(rel(a.mean - em, (1.0 - (-(m as f64) * H).exp()) * s2) < 1e-9);
        let (_, c2, c3) = main_constants(H, m);
        assert_eq!(a.b2, 2.0 * c3);
        assert!(a.b1 > c2);
    }
}

#[test]
fn asymptotic_bias_cases() {
    assert_eq!(asymptotic_bias(0.0, Parametrization::Main, H), 0.0);
    assert_eq!(asymptotic_bias(0.0, Parametrization::Alternative, H), 0.0);
    assert_eq!(asymptotic_bias(0.05167, Parametrization::Main, H), 0.05167);
    let alt = asymptotic_bias(0.05167, Parametrization::Alternative, H);
    assert!(alt > 0.0 && alt < 0.05167 / 10.0);
}

#[test]
fn alternative_bias_matches_stationary_recursion() {
    // Stationary mean E[κâ]/(1 - E[ρ]) from the moment recursion run to
    // convergence, against the closed-form approximation.
    let law = sparse_law();
    let a = law.a();
    let s2 = hypergeo_variance(&law) / (a - 1.0).powi(2);
    let cfg = ExpectationConfig::exact();
    let (m_alt, _) = unconditional_moments(&law, StepLaw::Control(Parametrization::Alternative), a, H, 5000, &cfg).unwrap();
    let (m_main, _) = unconditional_moments(&law, StepLaw::Control(Parametrization::Main), a, H, 5000, &cfg).unwrap();
    let approx = asymptotic_bias(s2, Parametrization::Alternative, H);
    assert!(rel(approx, m_alt - a) < 0.01, "{approx} vs {}", m_alt - a);
    assert!(m_alt - a < m_main - a);
}

#[test]
fn baker_formula_equals_total_variance_recursion() {
    let law = sparse_law();
    let cfg = ExpectationConfig::exact();
    let v = hypergeo_variance(&law);
    for m in [1u32, 2, 5, 20, 100] {
        let (um, uv) = unconditional_moments(&law, StepLaw::Baker, THETA0, H, m, &cfg).unwrap();
        let (em, _) = exact_cir_moments(THETA0, law.a(), H, m);
        assert!(rel(um, em) < 1e-12);
        assert!(rel(uv, baker_variance(v, law.a(), THETA0, H, m)) < 1e-10, "M={m}");
    }
}

#[test]
fn variance_curves_ordered_above_exact() {
    // Control-variate curves sit between the exact and Baker curves; the
    // alternative curve below the main one. The alt-versus-exact comparison
    // is left to the acceptance suite.
    let law = sparse_law();
    let cfg = ExpectationConfig::default();
    for m in 1..=100u32 {
        let r1 = corollary1_moments(&law, THETA0, H, m, &cfg).unwrap();
        let r2 = corollary_a2_moments(&law, THETA0, H, m, &cfg).unwrap();
        assert!(r1.exact_variance <= r1.variance, "M={m}");
        assert!(r2.variance <= r1.variance, "M={m}");
        assert!(r1.variance <= r1.baker_variance, "M={m}");
    }
}

#[test]
fn sparse_law_reference_values() {
    let law = sparse_law();
    let cfg = ExpectationConfig::default();
    let r = corollary1_moments(&law, THETA0, H, 100, &cfg).unwrap();
    assert!((r.exact_variance - 150.087).abs() < 1e-3);
    assert!((r.variance - 159.036).abs() < 1e-3);
    assert!((r.baker_variance - 207.472).abs() < 1e-3);
    assert!(r.exact_expectations && r.excluded_draws == 0);
    assert!(r.nonpositive_rate_mass > 0.0 && r.nonpositive_rate_mass < 1e-6);
    let r2 = corollary_a2_moments(&law, THETA0, H, 100, &cfg).unwrap();
    assert!((r2.variance - 150.841).abs() < 1e-3);
}

#[test]
fn monte_carlo_expectations_agree_with_summation() {
    let law = sparse_law();
    let exact = corollary1_moments(&law, THETA0, H, 20, &ExpectationConfig::exact()).unwrap();
    let mc = corollary1_moments(&law, THETA0, H, 20, &ExpectationConfig::monte_carlo(20_000, 5)).unwrap();
    assert!(!mc.exact_expectations);
    assert!(mc.expectation_stderr.iter().all(|&s| s > 0.0));
    assert!(rel(mc.variance, exact.variance) < 0.01);
}

#[test]
fn unit_estimate_draws_are_excluded_and_counted() {
    // α = 1: â = 1 whenever the subsample has no positives.
    let law = MinibatchLaw::new(10, 3, 5, 1.0).unwrap();
    let ex = a_hat_expectations(&law, &ExpectationConfig::exact(), &[&|x| 1.0 / (x - 1.0)]).unwrap();
    assert_eq!(ex.excluded, 1);
    assert!(ex.values[0].is_finite());
}

#[test]
fn sparse_posterior_is_refused() {
    let law = MinibatchLaw::new(1000, 0, 100, 0.1).unwrap();
    let cfg = ExpectationConfig::default();
    assert!(corollary1_moments(&law, 1.0, H, 5, &cfg).is_err());
    assert!(corollary_a2_moments(&law, 1.0, H, 5, &cfg).is_err());
}

#[test]
fn hypergeometric_mgf_examples() {
    let law = sparse_law();
    assert!((hypergeo_mgf(&law, 0.0) - 1.0).abs() < 1e-14);
    let full = MinibatchLaw::new(1000, 150, 1000, 0.1).unwrap();
    for t in [-0.1, 0.02] {
        assert!(rel(hypergeo_mgf(&full, t), (t * 150.1f64).exp()) < 1e-12);
    }
    let t = -H / (law.a() - 1.0);
    assert!(rel(hypergeo_mgf(&law, t), hypergeo_mgf_series(&law, t)) < 1e-10);
}

#[test]
fn hypergeometric_mgf_paths_agree_on_grid() {
    let mut worst: f64 = 0.0;
    for &n_pop in &[1u64, 2, 7, 50, 333, 1000, 2000] {
        for &p in &[0.0, 0.15, 0.5, 1.0] {
            let k = (p * n_pop as f64).round() as u64;
            let mut draws: Vec<u64> = [1, 2, n_pop / 10, n_pop / 3, n_pop / 2, n_pop - 1, n_pop].into_iter().filter(|&n| n >= 1 && n <= n_pop).collect();
            draws.dedup();
            for n in draws {
                let law = MinibatchLaw::new(n_pop, k, n, 0.1).unwrap();
                for i in 0..=10 {
                    let t = -0.1 + 0.02 * i as f64;
                    let (x, y) = (hypergeo_mgf(&law, t), hypergeo_mgf_series(&law, t));
                    worst = worst.max(rel(x, y));
                }
            }
        }
    }
    assert!(worst < 1e-10, "worst relative gap {worst}");
}

#[test]
fn hypergeometric_mgf_matches_pmf_sum() {
    let pmf = z_pmf(60, 25, 40);
    let law = MinibatchLaw::new(60, 25, 40, 0.3).unwrap();
    for t in [-0.05, 0.01, 0.08] {
        let direct: f64 = pmf.iter().map(|&(z, w)| w * (t * (0.3 + 1.5 * z as f64)).exp()).sum();
        assert!(rel(hypergeo_mgf(&law, t), direct) < 1e-12);
    }
}

#[test]
fn hypergeometric_variance_examples() {
    assert!((hypergeo_variance(&sparse_law()) - 1148.6486486).abs() < 1e-6);
    assert_eq!(hypergeo_variance(&MinibatchLaw::new(1000, 150, 1000, 0.1).unwrap()), 0.0);
    assert_eq!(hypergeo_variance(&MinibatchLaw::new(1000, 0, 100, 0.1).unwrap()), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn closed_form_matches_recursion(seed in any::<u64>(), m in 1usize..40, frac in -3.0f64..0.95, alt in any::<bool>()) {
        let mut noise = sample_noise(seed, m);
        let p = if alt { Parametrization::Alternative } else { Parametrization::Main };
        if alt {
            // Negative rates are allowed in the alternative form.
            let mut s = RngStream::new(seed, 9);
            noise.b_hats.iter_mut().for_each(|b| *b = -0.5 + 2.5 * s.uniform());
        }
        let sup = mgf_domain_upper(&noise, p).unwrap();
        let s = if sup.is_finite() { frac * sup } else { frac };
        let x = ln_mgf(&noise, p, s).unwrap();
        let y = ln_mgf_closed_form(&noise, p, s).unwrap();
        prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{} vs {}", x, y);
    }

    #[test]
    fn mgf_is_log_convex(seed in any::<u64>(), m in 1usize..10, u in -2.0f64..0.9, v in -2.0f64..0.9) {
        let noise = sample_noise(seed, m);
        let sup = mgf_domain_upper(&noise, Parametrization::Main).unwrap();
        let (s1, s2) = (u * sup, v * sup);
        let k = |s: f64| ln_mgf(&noise, Parametrization::Main, s).unwrap();
        prop_assert!(k(0.5 * (s1 + s2)) <= 0.5 * (k(s1) + k(s2)) + 1e-9);
    }

    #[test]
    fn moment_variances_nonnegative(m in 1u32..60, np in 20u64..400, n in 5u64..500) {
        let law = MinibatchLaw::new(500, np, n, 0.1).unwrap();
        let cfg = ExpectationConfig::default();
        let r1 = corollary1_moments(&law, 3.0, 0.2, m, &cfg).unwrap();
        let r2 = corollary_a2_moments(&law, 3.0, 0.2, m, &cfg).unwrap();
        // The formulas average over â; they describe a chain only when b̂ > 0
        // almost surely.
        prop_assume!(r1.nonpositive_rate_mass < 1e-9);
        prop_assert!(r1.variance >= 0.0 && r2.variance >= 0.0);
        prop_assert!(r1.baker_variance >= r1.exact_variance);
    }
}

#[test]
fn moment_variances_average_conditional_variance() {
    // Both corollaries are E over iid noise of Var[θ_M | noise]; estimate that
    // expectation by drawing noise sequences and using the conditional recursion.
    let law = sparse_law();
    let sampler = law.sampler();
    let a = law.a();
    let cfg = ExpectationConfig::exact();
    for m in [5u32, 20] {
        for p in [Parametrization::Main, Parametrization::Alternative] {
            let mut s = RngStream::new(31, m as u64);
            let vs: Vec<f64> = (0..40_000)
                .map(|_| {
                    let a_hats: Vec<f64> = (0..m).map(|_| law.sample_a_hat(&sampler, &mut s)).collect();
                    let b_hats = a_hats.iter().map(|x| (x - 1.0) / (a - 1.0)).collect();
                    NoiseSequence::new(a_hats, b_hats, H, THETA0).unwrap().conditional_moments(p).unwrap().1
                })
                .collect();
            let r = match p {
                Parametrization::Main => corollary1_moments(&law, THETA0, H, m, &cfg),
                Parametrization::Alternative => corollary_a2_moments(&law, THETA0, H, m, &cfg),
            }
            .unwrap();
            assert!(z_score(mean(&vs), r.variance, mean_stderr(&vs)) < 3.0, "M={m} {p:?}: {} vs {}", mean(&vs), r.variance);
        }
    }
}
