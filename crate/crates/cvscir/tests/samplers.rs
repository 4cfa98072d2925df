mod common;

use common::*;
use cvscir::estimators::{CategoricalCounts, CvStatus, LabelledData, MinibatchEstimate};
use cvscir::oracle::{baker_variance, exact_cir_moments, hypergeo_variance, MinibatchLaw};
use cvscir::rng::{sample_gamma, RngStream};
use cvscir::samplers::*;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Gamma};

const CHAINS: usize = 100_000;

fn run_exact(seed: u64, theta0: f64, a: f64, h: f64, m: u32) -> Vec<f64> {
    let mut s = RngStream::new(seed, 0);
    (0..CHAINS)
        .map(|_| {
            let mut t = theta0;
            for _ in 0..m {
                t = exact_cir_step(&mut s, t, a, h).unwrap();
            }
            t
        })
        .collect()
}

/// E[θ_M] = θ₀e^{-Mh} + a(1 - e^{-Mh}), Var[θ_M] = 2θ₀(e^{-Mh} - e^{-2Mh}) + a(1 - e^{-Mh})².
fn cir_formula(theta0: f64, a: f64, h: f64, m: u32) -> (f64, f64) {
    let e = (-(m as f64) * h).exp();
    (theta0 * e + a * (1.0 - e), 2.0 * theta0 * (e - e * e) + a * (1.0 - e).powi(2))
}

#[test]
fn exact_cir_moments_on_grid() {
    let grid = [(7.67, 150.1, 0.1, 1), (7.67, 150.1, 0.1, 50), (0.5, 0.3, 0.5, 3), (10.0, 2.0, 1.0, 5), (0.0, 4.0, 0.05, 10)];
    for (i, &(theta0, a, h, m)) in grid.iter().enumerate() {
        let xs = run_exact(100 + i as u64, theta0, a, h, m);
        let (mu, var) = cir_formula(theta0, a, h, m);
        let (om, ov) = exact_cir_moments(theta0, a, h, m);
        assert!((mu - om).abs() < 1e-12 * mu.max(1.0) && (var - ov).abs() < 1e-12 * var.max(1.0));
        let (okm, okv) = moments_within_3se(&xs, mu, var);
        assert!(okm && okv, "{:?}: mean {} vs {mu}, var {} vs {var}", grid[i], mean(&xs), variance(&xs));
    }
}

#[test]
fn exact_cir_infinite_step_is_stationary_gamma() {
    let mut s = RngStream::new(1, 0);
    let a = 2.7;
    let xs: Vec<f64> = (0..CHAINS).map(|_| exact_cir_step(&mut s, 55.0, a, f64::INFINITY).unwrap()).collect();
    let g = Gamma::new(a, 1.0).unwrap();
    assert!(ks_accepts_cdf(&xs, |x| g.cdf(x)));
}

#[test]
fn cv_main_infinite_step_is_gamma_with_rate() {
    let mut s = RngStream::new(2, 0);
    let (a_hat, b_hat) = (6.5, 0.4);
    let xs: Vec<f64> = (0..CHAINS).map(|_| cv_scir_step_main(&mut s, 3.0, a_hat, b_hat, f64::INFINITY).unwrap()).collect();
    let g = Gamma::new(a_hat, b_hat).unwrap();
    assert!(ks_accepts_cdf(&xs, |x| g.cdf(x)));
    // A large finite step gives the same law.
    let ys: Vec<f64> = (0..CHAINS).map(|_| cv_scir_step_main(&mut s, 3.0, a_hat, b_hat, 60.0).unwrap()).collect();
    assert!(ks_accepts_cdf(&ys, |x| g.cdf(x)));
}

#[test]
fn unit_rate_kernels_reduce_to_exact_cir() {
    let (theta, a, h) = (3.0, 4.5, 0.3);
    let mut s0 = RngStream::new(3, 0);
    let mut s1 = RngStream::new(3, 1);
    let mut s2 = RngStream::new(3, 2);
    let exact: Vec<f64> = (0..CHAINS).map(|_| exact_cir_step(&mut s0, theta, a, h).unwrap()).collect();
    let main: Vec<f64> = (0..CHAINS).map(|_| cv_scir_step_main(&mut s1, theta, a, 1.0, h).unwrap()).collect();
    let scir: Vec<f64> = (0..CHAINS).map(|_| scir_step(&mut s2, theta, a, h).unwrap()).collect();
    assert!(ks_accepts(&exact, &main));
    assert!(ks_accepts(&exact, &scir));
}

#[test]
fn parametrizations_coincide_at_unit_rate() {
    for h in [0.01, 0.5, 3.0] {
        let m = TransitionParams::cv_main(2.0, 3.0, 1.0, h).unwrap();
        let a = TransitionParams::cv_alt(2.0, 3.0, 1.0, h).unwrap();
        let e = TransitionParams::exact_cir(2.0, 3.0, h).unwrap();
        for (x, y) in [(m, a), (m, e)] {
            assert!((x.scale - y.scale).abs() < 1e-15 && (x.noncentrality - y.noncentrality).abs() < 1e-12);
            assert_eq!(x.dof, y.dof);
        }
    }
}

#[test]
fn alt_negative_rate_is_a_valid_draw() {
    let p = TransitionParams::cv_alt(2.0, 1.5, -0.5, 0.1).unwrap();
    assert!((p.scale - (1.0 - 0.05f64.exp()) / -1.0).abs() < 1e-15);
    assert!(p.scale > 0.0 && p.noncentrality > 0.0);
    let mut s = RngStream::new(4, 0);
    assert!((0..CHAINS).all(|_| p.sample(&mut s) >= 0.0));
}

#[test]
fn main_parametrization_refuses_nonpositive_rate() {
    let mut s = RngStream::new(0, 0);
    assert!(cv_scir_step_main(&mut s, 1.0, 2.0, 0.0, 0.1).is_err());
    assert!(cv_scir_step_main(&mut s, 1.0, 2.0, -0.3, 0.1).is_err());
    assert!(cv_scir_step_alt(&mut s, 1.0, 2.0, 0.0, 0.1).is_err());
    assert!(exact_cir_step(&mut s, 1.0, 0.0, 0.1).is_err());
    assert!(exact_cir_step(&mut s, 1.0, 1.0, 0.0).is_err());
}

#[test]
fn fallback_policies_are_applied_and_tagged() {
    let mut s = RngStream::new(0, 0);
    let main = Kernel::new(KernelKind::CvScirMain);
    let (_, tag) = main.step_category(&mut s, 1.0, 0.5, -0.2, CvStatus::NonPositiveScale, 0.1).unwrap();
    assert_eq!(tag, Fallback::Alternative);
    let simple = Kernel { kind: KernelKind::CvScirMain, fallback: FallbackPolicy::Simple };
    let (_, tag) = simple.step_category(&mut s, 1.0, 0.5, -0.2, CvStatus::NonPositiveScale, 0.1).unwrap();
    assert_eq!(tag, Fallback::Simple);
    let (_, tag) = main.step_category(&mut s, 1.0, 2.0, f64::NAN, CvStatus::UnitMode, 0.1).unwrap();
    assert_eq!(tag, Fallback::Simple);
    let alt = Kernel::new(KernelKind::CvScirAlt);
    let (_, tag) = alt.step_category(&mut s, 1.0, 0.5, -0.2, CvStatus::NonPositiveScale, 0.1).unwrap();
    assert_eq!(tag, Fallback::None);
    let (_, tag) = alt.step_category(&mut s, 1.0, 1.0, 0.0, CvStatus::NonPositiveScale, 0.1).unwrap();
    assert_eq!(tag, Fallback::Simple);
}

#[test]
fn sparse_shape_reaches_the_boundary_but_interior_shape_does_not() {
    // Draws below 1e-8 stand in for the boundary; θ = 0 exactly has
    // probability zero for a continuous draw.
    let tiny = 1e-8;
    let mut s = RngStream::new(5, 0);
    let (mut t_scir, mut t_main, mut t_exact) = (1.0, 1.0, 1.0);
    let (mut hit_scir, mut hit_main, mut hit_exact) = (0, 0, 0);
    for _ in 0..20_000 {
        t_scir = scir_step(&mut s, t_scir, 0.1, 0.5).unwrap();
        t_main = cv_scir_step_main(&mut s, t_main, 0.1, 1.0, 0.5).unwrap();
        t_exact = exact_cir_step(&mut s, t_exact, 3.0, 0.5).unwrap();
        hit_scir += (t_scir < tiny) as u32;
        hit_main += (t_main < tiny) as u32;
        hit_exact += (t_exact < tiny) as u32;
    }
    assert!(hit_scir > 1000 && hit_main > 1000, "{hit_scir} {hit_main}");
    assert_eq!(hit_exact, 0);
}

#[test]
fn chain_at_zero_moves_off() {
    let mut s = RngStream::new(6, 0);
    let xs: Vec<f64> = (0..1000).map(|_| scir_step(&mut s, 0.0, 0.1, 0.5).unwrap()).collect();
    assert!(xs.iter().any(|&x| x > 0.0));
}

#[test]
fn baker_variance_matches_scir_chains() {
    let law = MinibatchLaw::from_fraction(1000, 0.15, 100, 0.1).unwrap();
    let sampler = law.sampler();
    let (theta0, h) = (7.67, 0.1);
    for m in [1u32, 20] {
        let mut s = RngStream::new(7, m as u64);
        let xs: Vec<f64> = (0..CHAINS)
            .map(|_| {
                let mut t = theta0;
                for _ in 0..m {
                    let a_hat = law.sample_a_hat(&sampler, &mut s);
                    t = scir_step(&mut s, t, a_hat, h).unwrap();
                }
                t
            })
            .collect();
        let v = baker_variance(hypergeo_variance(&law), law.a(), theta0, h, m);
        assert!(z_score(variance(&xs), v, variance_stderr(&xs)) < 3.0, "M={m}: {} vs {v}", variance(&xs));
    }
}

#[test]
fn scir_stationary_variance_is_inflated() {
    let law = MinibatchLaw::from_fraction(1000, 0.15, 100, 0.1).unwrap();
    let sampler = law.sampler();
    let h = 0.1;
    let mut s = RngStream::new(8, 0);
    let mut t = law.a();
    let mut xs = Vec::with_capacity(400_000);
    for i in 0..400_100 {
        let a_hat = law.sample_a_hat(&sampler, &mut s);
        t = scir_step(&mut s, t, a_hat, h).unwrap();
        if i >= 100 {
            xs.push(t);
        }
    }
    let inflation = (1.0 - (-h).exp()) / (1.0 + (-h).exp()) * hypergeo_variance(&law);
    let excess = variance(&xs) - law.a();
    // Autocorrelated samples: compare the excess within 10% of its size.
    assert!((excess - inflation).abs() < 0.1 * inflation, "{excess} vs {inflation}");
}

#[test]
fn sgrld_is_nonnegative_and_biased_at_the_boundary() {
    let mut s = RngStream::new(9, 0);
    let mut t = 1.0;
    let mut sum = 0.0;
    for i in 0..200_000 {
        t = sgrld_step(&mut s, t, 0.1, 0.5);
        assert!(t >= 0.0);
        if i >= 1000 {
            sum += t;
        }
    }
    // Stationary Gamma(0.1, 1) has mean 0.1; the Euler step overshoots.
    assert!(sum / 199_000.0 > 0.15, "{}", sum / 199_000.0);
}

fn ten_category_data() -> (LabelledData, CategoricalCounts) {
    let mut totals = vec![0usize; 10];
    totals[..3].copy_from_slice(&[800, 100, 100]);
    let data = LabelledData::from_totals(&totals);
    let counts = CategoricalCounts::from_data(&data, vec![0.1; 10]).unwrap();
    (data, counts)
}

#[test]
fn cv_main_recovers_dominant_component_mean() {
    let (data, counts) = ten_category_data();
    let mut source = FixedDataSource::new(&data, &counts, 10).unwrap();
    let mut s = RngStream::new(10, 0);
    let init = GammaChainState::new(vec![1.0; 10], KernelKind::CvScirMain).unwrap();
    let trace = run_chain(&mut s, init, Kernel::new(KernelKind::CvScirMain), &StepsizeSchedule::constant(0.5), &mut source, 1000, 1000, 1).unwrap();
    assert_eq!(trace.records.len(), 1000);
    let m = mean(&trace.omega_column(0));
    assert!((m - 800.1 / 1001.0).abs() < 0.02, "{m}");
}

#[test]
fn scir_zero_count_component_concentrates_near_zero() {
    let (data, counts) = ten_category_data();
    let mut source = FixedDataSource::new(&data, &counts, 10).unwrap();
    let mut s = RngStream::new(11, 0);
    let init = GammaChainState::new(vec![1.0; 10], KernelKind::Scir).unwrap();
    let trace = run_chain(&mut s, init, Kernel::new(KernelKind::Scir), &StepsizeSchedule::constant(0.5), &mut source, 1000, 1000, 1).unwrap();
    assert!(cvscir::stats::median(&trace.omega_column(3)) < 1e-3);
}

#[test]
fn exact_chain_trace_mean_approaches_shape() {
    let data = LabelledData::from_totals(&[30, 10]);
    let counts = CategoricalCounts::from_data(&data, vec![1.0, 1.0]).unwrap();
    let mut source = FixedDataSource::new(&data, &counts, 5).unwrap();
    let mut s = RngStream::new(12, 0);
    let init = GammaChainState::new(vec![1.0, 1.0], KernelKind::ExactCir).unwrap();
    let trace = run_chain(&mut s, init, Kernel::new(KernelKind::ExactCir), &StepsizeSchedule::constant(0.5), &mut source, 100_000, 100, 1).unwrap();
    let th = trace.theta_column(0);
    // Lag-one correlation e^{-h}: inflate the iid standard error accordingly.
    let rho: f64 = (-0.5f64).exp();
    let se = mean_stderr(&th) * ((1.0 + rho) / (1.0 - rho)).sqrt();
    assert!(z_score(mean(&th), 31.0, se) < 3.0);
}

#[test]
fn run_chain_bookkeeping() {
    let (data, counts) = ten_category_data();
    let mut source = FixedDataSource::new(&data, &counts, 10).unwrap();
    let mut s = RngStream::new(13, 0);
    let kernel = Kernel::new(KernelKind::Scir);
    let init = GammaChainState::new(vec![1.0; 10], KernelKind::Scir).unwrap();
    let sched = StepsizeSchedule::constant(0.5);
    let empty = run_chain(&mut s, init.clone(), kernel, &sched, &mut source, 0, 50, 1).unwrap();
    assert!(empty.is_empty());
    let thinned = run_chain(&mut s, init.clone(), kernel, &sched, &mut source, 100, 10, 7).unwrap();
    assert_eq!(thinned.records.len(), 14);
    assert_eq!(thinned.records[0].iter, 17);
    assert!(run_chain(&mut s, init, kernel, &sched, &mut source, 10, 0, 0).is_err());
}

fn small_trace() -> ChainTrace {
    let (data, counts) = ten_category_data();
    let mut source = FixedDataSource::new(&data, &counts, 10).unwrap();
    let mut s = RngStream::new(14, 0);
    let init = GammaChainState::new(vec![1.0; 10], KernelKind::CvScirMain).unwrap();
    run_chain(&mut s, init, Kernel::new(KernelKind::CvScirMain), &StepsizeSchedule::constant(0.5), &mut source, 20, 5, 1).unwrap()
}

#[test]
fn trace_csv_layout() {
    let trace = small_trace();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,h,category,theta,omega,a_hat,b_hat,fallback"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 20 * 10);
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(first.len(), 8);
    assert_eq!(first[0], "6");
    assert_eq!(first[2], "0");
    let r = &trace.records[0];
    assert_eq!(first[3].parse::<f64>().unwrap(), r.theta[0]);
    // Zero-count categories have their control variate disabled.
    assert!(rows[3].ends_with(",disabled"));
}

#[test]
fn trace_binary_round_trip() {
    let trace = small_trace();
    let mut buf = Vec::new();
    trace.write_binary(&mut buf).unwrap();
    assert_eq!(&buf[..8], b"CVSCIRTR");
    let back = ChainTrace::read_binary(buf.as_slice()).unwrap();
    assert_eq!(back.categories, trace.categories);
    for (x, y) in back.records.iter().zip(&trace.records) {
        assert_eq!(x.iter, y.iter);
        assert_eq!(x.theta, y.theta);
        assert_eq!(x.fallback, y.fallback);
        assert!(x.b_hat.iter().zip(&y.b_hat).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    buf[0] = b'X';
    assert!(ChainTrace::read_binary(buf.as_slice()).is_err());
}

#[test]
fn simplex_examples() {
    assert_eq!(to_simplex(&[1.0; 4]).unwrap(), vec![0.25; 4]);
    assert_eq!(to_simplex(&[0.0, 0.0, 5.0, 0.0]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    assert!(to_simplex(&[0.0; 3]).is_err());
}

#[test]
fn gamma_normalisation_gives_dirichlet_mean() {
    let a = [2.0, 3.0, 0.5];
    let mut s = RngStream::new(15, 0);
    let xs: Vec<f64> = (0..CHAINS)
        .map(|_| {
            let theta: Vec<f64> = a.iter().map(|&ak| sample_gamma(&mut s, ak, 1.0).unwrap()).collect();
            to_simplex(&theta).unwrap()[0]
        })
        .collect();
    assert!(z_score(mean(&xs), 2.0 / 5.5, mean_stderr(&xs)) < 3.0);
}

#[test]
fn stepsize_examples() {
    let s = StepsizeSchedule::new(1.0, 1000.0, 3.32).unwrap();
    assert_eq!(stepsize_at(&s, 0), 1.0);
    assert!((stepsize_at(&s, 1000) - 2f64.powf(-3.32)).abs() < 1e-15);
    assert!((stepsize_at(&s, 1000) - 0.1001).abs() < 1e-4);
    let c = StepsizeSchedule::new(0.3, 10.0, 0.0).unwrap();
    assert!((0..100).all(|m| c.at(m) == 0.3));
    assert!(StepsizeSchedule::new(0.0, 1.0, 1.0).is_err());
}

#[test]
fn kernel_names_round_trip() {
    for k in KernelKind::ALL {
        assert_eq!(KernelKind::parse(k.name()), Some(k));
    }
    assert_eq!(KernelKind::parse("nope"), None);
}

#[test]
fn exact_estimate_for_exact_kernel() {
    let est = MinibatchEstimate::exact(vec![2.0, 3.0]);
    let mut theta = vec![1.0, 1.0];
    let tags = Kernel::new(KernelKind::ExactCir).advance(&mut RngStream::new(0, 0), &mut theta, &est, 0.1).unwrap();
    assert_eq!(tags, vec![Fallback::None; 2]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simplex_closure(theta in prop::collection::vec(0.0f64..1e6, 1..50)) {
        prop_assume!(theta.iter().sum::<f64>() > 0.0);
        let w = to_simplex(&theta).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn schedule_positive_nonincreasing(h0 in 1e-3f64..10.0, tau in 1e-2f64..1e4, kappa in 0.0f64..5.0, m in 0u64..1_000_000) {
        let s = StepsizeSchedule::new(h0, tau, kappa).unwrap();
        prop_assert!(s.at(m) > 0.0);
        prop_assert!(s.at(m + 1) <= s.at(m));
    }

    #[test]
    fn alt_scale_is_positive(b in -5.0f64..5.0, h in 1e-3f64..2.0, theta in 0.0f64..100.0) {
        prop_assume!(b != 0.0);
        let p = TransitionParams::cv_alt(theta, 1.3, b, h).unwrap();
        prop_assert!(p.scale > 0.0 && p.noncentrality >= 0.0);
        // Conditional mean ρθ + κâ.
        let (kappa, rho) = alt_coefficients(b, h);
        prop_assert!((p.mean() - (rho * theta + kappa * 1.3)).abs() <= 1e-9 * p.mean().max(1.0));
    }

    #[test]
    fn kernels_stay_nonnegative(theta in 0.0f64..50.0, a_hat in 0.01f64..50.0, b in 0.01f64..3.0, h in 1e-3f64..3.0, seed in any::<u64>()) {
        let mut s = RngStream::new(seed, 0);
        for kind in KernelKind::ALL {
            let (x, _) = Kernel::new(kind).step_category(&mut s, theta, a_hat, b, CvStatus::Valid, h).unwrap();
            prop_assert!(x >= 0.0 && x.is_finite());
        }
    }
}
