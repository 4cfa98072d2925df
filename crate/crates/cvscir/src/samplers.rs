//! Markov kernels on the Gamma representation of the simplex.
//!
//! All CIR-type kernels share one law: θ' = (κ/2)·W with
//! W ~ χ²(2â, 2θρ/κ), so that E[θ'|θ] = ρθ + κâ. The kernels differ only in
//! (κ, ρ):
//!
//! | kernel      | κ                    | ρ         |
//! |-------------|----------------------|-----------|
//! | exact, SCIR | 1 - e^{-h}           | e^{-h}    |
//! | CV main     | (1 - e^{-h})/b̂       | e^{-h}    |
//! | CV alt      | (1 - e^{-b̂h})/b̂      | e^{-b̂h}   |
//!
//! SGRLD is the Euler step θ' = |θ + (h/2)(â - θ) + √(hθ) η| of the Langevin
//! diffusion dθ = (a - θ)dt + √(2θ) dW under the metric θ^{-1}, written with the
//! expanded-mean drift and mirrored at zero.

use std::io::{self, Read, Write};

use crate::error::{domain, Error, Result};
use crate::estimators::{
    cv_estimate, refresh_mode_snapshot, simple_estimate, CategoricalCounts, CvStatus, MinibatchEstimate,
    ModeSnapshot, PerDatumCounts,
};
use crate::rng::{sample_noncentral_chisq, sample_without_replacement, NoncentralChiSq, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelKind {
    ExactCir,
    Scir,
    CvScirMain,
    CvScirAlt,
    Sgrld,
}

impl KernelKind {
    pub const ALL: [KernelKind; 5] = [
        KernelKind::ExactCir,
        KernelKind::Scir,
        KernelKind::CvScirMain,
        KernelKind::CvScirAlt,
        KernelKind::Sgrld,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::ExactCir => "exact",
            KernelKind::Scir => "scir",
            KernelKind::CvScirMain => "cv-main",
            KernelKind::CvScirAlt => "cv-alt",
            KernelKind::Sgrld => "sgrld",
        }
    }

    pub fn parse(s: &str) -> Option<KernelKind> {
        KernelKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn uses_control_variate(self) -> bool {
        matches!(self, KernelKind::CvScirMain | KernelKind::CvScirAlt)
    }
}

/// What the main parametrization does with a category whose b̂ ≤ 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FallbackPolicy {
    /// Use the alternative parametrization for that step.
    #[default]
    Alternative,
    /// Use the simple SCIR step.
    Simple,
}

/// The law actually used for one category-step, when it differs from the
/// configured kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fallback {
    None,
    Alternative,
    Simple,
    /// Control variate switched off because the mode is not interior.
    Disabled,
}

impl Fallback {
    pub fn name(self) -> &'static str {
        match self {
            Fallback::None => "none",
            Fallback::Alternative => "alt",
            Fallback::Simple => "simple",
            Fallback::Disabled => "disabled",
        }
    }

    fn code(self) -> u8 {
        match self {
            Fallback::None => 0,
            Fallback::Alternative => 1,
            Fallback::Simple => 2,
            Fallback::Disabled => 3,
        }
    }

    fn from_code(c: u8) -> Option<Fallback> {
        Some(match c {
            0 => Fallback::None,
            1 => Fallback::Alternative,
            2 => Fallback::Simple,
            3 => Fallback::Disabled,
            _ => return None,
        })
    }
}

/// Resolved parameters of one χ²-type transition: θ' = scale · χ²(dof, noncentrality).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionParams {
    pub dof: f64,
    pub noncentrality: f64,
    pub scale: f64,
}

/// 1 - e^{-x} without cancellation.
fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// (κ, ρ) of the alternative parametrization; the b̂ → 0 limit is (h, 1).
pub fn alt_coefficients(b_hat: f64, h: f64) -> (f64, f64) {
    if b_hat == 0.0 {
        (h, 1.0)
    } else {
        (one_minus_exp_neg(b_hat * h) / b_hat, (-b_hat * h).exp())
    }
}

impl TransitionParams {
    /// θ' = (κ/2) χ²(2â, 2θρ/κ).
    pub fn from_coefficients(theta: f64, a_hat: f64, kappa: f64, rho: f64) -> Result<Self> {
        if !(a_hat > 0.0) {
            return Err(domain(format!("shape estimate must be positive, got {a_hat}")));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(domain(format!("theta must be finite and non-negative, got {theta}")));
        }
        if !(kappa > 0.0 && kappa.is_finite() && rho.is_finite()) {
            return Err(domain(format!("transition overflow (kappa={kappa}, rho={rho})")));
        }
        let noncentrality = 2.0 * theta * rho / kappa;
        NoncentralChiSq::new(2.0 * a_hat, noncentrality)?;
        Ok(TransitionParams { dof: 2.0 * a_hat, noncentrality, scale: 0.5 * kappa })
    }

    pub fn exact_cir(theta: f64, a: f64, h: f64) -> Result<Self> {
        check_h(h)?;
        if h.is_infinite() {
            return Self::from_coefficients(theta, a, 1.0, 0.0);
        }
        Self::from_coefficients(theta, a, one_minus_exp_neg(h), (-h).exp())
    }

    pub fn cv_main(theta: f64, a_hat: f64, b_hat: f64, h: f64) -> Result<Self> {
        check_h(h)?;
        if !(b_hat > 0.0) {
            return Err(domain(format!("main parametrization needs b_hat > 0, got {b_hat}")));
        }
        if h.is_infinite() {
            return Self::from_coefficients(theta, a_hat, 1.0 / b_hat, 0.0);
        }
        Self::from_coefficients(theta, a_hat, one_minus_exp_neg(h) / b_hat, (-h).exp())
    }

    pub fn cv_alt(theta: f64, a_hat: f64, b_hat: f64, h: f64) -> Result<Self> {
        check_h(h)?;
        if b_hat == 0.0 || b_hat.is_nan() {
            return Err(domain("alternative parametrization needs b_hat != 0"));
        }
        if h.is_infinite() && b_hat > 0.0 {
            return Self::from_coefficients(theta, a_hat, 1.0 / b_hat, 0.0);
        }
        let (kappa, rho) = alt_coefficients(b_hat, h);
        Self::from_coefficients(theta, a_hat, kappa, rho)
    }

    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        let chi = NoncentralChiSq::new(self.dof, self.noncentrality).expect("validated parameters");
        self.scale * sample_noncentral_chisq(stream, chi)
    }

    pub fn mean(&self) -> f64 {
        self.scale * (self.dof + self.noncentrality)
    }

    pub fn variance(&self) -> f64 {
        self.scale * self.scale * 2.0 * (self.dof + 2.0 * self.noncentrality)
    }
}

fn check_h(h: f64) -> Result<()> {
    if h > 0.0 {
        Ok(())
    } else {
        Err(domain(format!("stepsize must be positive, got {h}")))
    }
}

pub fn exact_cir_step(stream: &mut RngStream, theta: f64, a: f64, h: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(domain(format!("CIR shape must be positive, got {a}")));
    }
    Ok(TransitionParams::exact_cir(theta, a, h)?.sample(stream))
}

/// Exact CIR step with a replaced by the estimate â.
pub fn scir_step(stream: &mut RngStream, theta: f64, a_hat: f64, h: f64) -> Result<f64> {
    exact_cir_step(stream, theta, a_hat, h)
}

pub fn cv_scir_step_main(stream: &mut RngStream, theta: f64, a_hat: f64, b_hat: f64, h: f64) -> Result<f64> {
    Ok(TransitionParams::cv_main(theta, a_hat, b_hat, h)?.sample(stream))
}

pub fn cv_scir_step_alt(stream: &mut RngStream, theta: f64, a_hat: f64, b_hat: f64, h: f64) -> Result<f64> {
    Ok(TransitionParams::cv_alt(theta, a_hat, b_hat, h)?.sample(stream))
}

pub fn sgrld_step(stream: &mut RngStream, theta: f64, a_hat: f64, h: f64) -> f64 {
    let eta = stream.normal();
    (theta + 0.5 * h * (a_hat - theta) + (h * theta).sqrt() * eta).abs()
}

/// ω = θ/Σθ.
pub fn to_simplex(theta: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = theta.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Degenerate(format!("cannot normalise masses with sum {total}")));
    }
    Ok(theta.iter().map(|t| t / total).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepsizeSchedule {
    pub h0: f64,
    pub tau: f64,
    pub kappa: f64,
}

impl StepsizeSchedule {
    pub fn new(h0: f64, tau: f64, kappa: f64) -> Result<Self> {
        if !(h0 > 0.0 && tau > 0.0 && kappa >= 0.0) {
            return Err(domain(format!("invalid schedule h0={h0} tau={tau} kappa={kappa}")));
        }
        Ok(StepsizeSchedule { h0, tau, kappa })
    }

    pub fn constant(h: f64) -> Self {
        StepsizeSchedule { h0: h, tau: 1.0, kappa: 0.0 }
    }

    /// h_m = h0 (1 + m/τ)^{-κ}.
    pub fn at(&self, m: u64) -> f64 {
        if self.kappa == 0.0 {
            return self.h0;
        }
        self.h0 * (1.0 + m as f64 / self.tau).powf(-self.kappa)
    }
}

pub fn stepsize_at(schedule: &StepsizeSchedule, m: u64) -> f64 {
    schedule.at(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub fallback: FallbackPolicy,
}

impl Kernel {
    pub fn new(kind: KernelKind) -> Self {
        Kernel { kind, fallback: FallbackPolicy::default() }
    }

    /// Advances one category. For `ExactCir` the estimate must be the full-data
    /// shape; for `Sgrld` `a_hat` is the drift target.
    pub fn step_category(
        &self,
        stream: &mut RngStream,
        theta: f64,
        a_hat: f64,
        b_hat: f64,
        status: CvStatus,
        h: f64,
    ) -> Result<(f64, Fallback)> {
        let simple = |stream: &mut RngStream, tag| Ok((scir_step(stream, theta, a_hat, h)?, tag));
        match self.kind {
            KernelKind::ExactCir => Ok((exact_cir_step(stream, theta, a_hat, h)?, Fallback::None)),
            KernelKind::Scir => simple(stream, Fallback::None),
            KernelKind::Sgrld => Ok((sgrld_step(stream, theta, a_hat, h), Fallback::None)),
            KernelKind::CvScirMain => match status {
                CvStatus::Valid => Ok((cv_scir_step_main(stream, theta, a_hat, b_hat, h)?, Fallback::None)),
                CvStatus::NonPositiveScale => match self.fallback {
                    FallbackPolicy::Alternative if b_hat != 0.0 => {
                        Ok((cv_scir_step_alt(stream, theta, a_hat, b_hat, h)?, Fallback::Alternative))
                    }
                    _ => simple(stream, Fallback::Simple),
                },
                CvStatus::SparseMode => simple(stream, Fallback::Disabled),
                CvStatus::UnitMode | CvStatus::Simple => simple(stream, Fallback::Simple),
            },
            KernelKind::CvScirAlt => match status {
                CvStatus::Valid | CvStatus::NonPositiveScale if b_hat != 0.0 => {
                    Ok((cv_scir_step_alt(stream, theta, a_hat, b_hat, h)?, Fallback::None))
                }
                CvStatus::SparseMode => simple(stream, Fallback::Disabled),
                _ => simple(stream, Fallback::Simple),
            },
        }
    }

    /// Advances every category of `theta` from the estimate.
    pub fn advance(
        &self,
        stream: &mut RngStream,
        theta: &mut [f64],
        est: &MinibatchEstimate,
        h: f64,
    ) -> Result<Vec<Fallback>> {
        if theta.len() != est.categories() {
            return Err(domain("theta and estimate lengths differ"));
        }
        let mut tags = Vec::with_capacity(theta.len());
        for (k, t) in theta.iter_mut().enumerate() {
            let (next, tag) = self.step_category(stream, *t, est.a_hat[k], est.b_hat_at(k), est.status[k], h)?;
            *t = next;
            tags.push(tag);
        }
        Ok(tags)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaChainState {
    pub theta: Vec<f64>,
    pub iteration: u64,
    pub kernel: KernelKind,
}

impl GammaChainState {
    pub fn new(theta: Vec<f64>, kernel: KernelKind) -> Result<Self> {
        if theta.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(domain("initial masses must be finite and non-negative"));
        }
        Ok(GammaChainState { theta, iteration: 0, kernel })
    }

    pub fn omega(&self) -> Result<Vec<f64>> {
        to_simplex(&self.theta)
    }
}

/// Supplies the per-iteration estimate for a chain.
pub trait EstimateSource {
    fn categories(&self) -> usize;
    fn estimate(&mut self, stream: &mut RngStream, kind: KernelKind) -> Result<MinibatchEstimate>;
}

/// Fixed data set: fresh subsample of size `n` each iteration, mode refreshed once.
pub struct FixedDataSource<'a, D: PerDatumCounts + ?Sized> {
    data: &'a D,
    counts: &'a CategoricalCounts,
    snapshot: ModeSnapshot,
    n: usize,
}

impl<'a, D: PerDatumCounts + ?Sized> FixedDataSource<'a, D> {
    pub fn new(data: &'a D, counts: &'a CategoricalCounts, n: usize) -> Result<Self> {
        if n == 0 || n > counts.n_data() {
            return Err(domain(format!("subsample size {n} outside 1..={}", counts.n_data())));
        }
        Ok(FixedDataSource { data, counts, snapshot: refresh_mode_snapshot(counts), n })
    }
}

impl<D: PerDatumCounts + ?Sized> EstimateSource for FixedDataSource<'_, D> {
    fn categories(&self) -> usize {
        self.counts.categories()
    }

    fn estimate(&mut self, stream: &mut RngStream, kind: KernelKind) -> Result<MinibatchEstimate> {
        if kind == KernelKind::ExactCir {
            return Ok(MinibatchEstimate::exact(self.counts.posterior()));
        }
        let subsample = sample_without_replacement(stream, self.counts.n_data(), self.n)?;
        if kind.uses_control_variate() {
            self.snapshot.tick();
            cv_estimate(self.data, self.counts, &self.snapshot, &subsample)
        } else {
            simple_estimate(self.data, self.counts, &subsample)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: u64,
    pub h: f64,
    pub theta: Vec<f64>,
    pub omega: Vec<f64>,
    pub a_hat: Vec<f64>,
    /// NaN where undefined.
    pub b_hat: Vec<f64>,
    pub fallback: Vec<Fallback>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainTrace {
    pub categories: usize,
    pub records: Vec<TraceRecord>,
}

const TRACE_MAGIC: &[u8; 8] = b"CVSCIRTR";
const TRACE_VERSION: u32 = 1;

impl ChainTrace {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Samples of ω_k across the trace.
    pub fn omega_column(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.omega[k]).collect()
    }

    pub fn theta_column(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.theta[k]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iter,h,category,theta,omega,a_hat,b_hat,fallback")?;
        for r in &self.records {
            for k in 0..self.categories {
                let b = if r.b_hat[k].is_nan() { String::new() } else { r.b_hat[k].to_string() };
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    r.iter,
                    r.h,
                    k,
                    r.theta[k],
                    r.omega[k],
                    r.a_hat[k],
                    b,
                    r.fallback[k].name()
                )?;
            }
        }
        Ok(())
    }

    /// Little-endian dump: magic, version, K, record count, then per record
    /// iter and h followed by (θ, ω, â, b̂, fallback) per category.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        w.write_all(&(self.categories as u32).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            w.write_all(&r.iter.to_le_bytes())?;
            w.write_all(&r.h.to_le_bytes())?;
            for k in 0..self.categories {
                for v in [r.theta[k], r.omega[k], r.a_hat[k], r.b_hat[k]] {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&[r.fallback[k].code()])?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<ChainTrace> {
        let bad = |m: &str| Error::Validation(format!("trace dump: {m}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = read_u32(&mut r)?;
        if version != TRACE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let categories = read_u32(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        let mut records = Vec::new();
        for _ in 0..count {
            let iter = read_u64(&mut r)?;
            let h = read_f64(&mut r)?;
            let mut rec = TraceRecord {
                iter,
                h,
                theta: Vec::with_capacity(categories),
                omega: Vec::with_capacity(categories),
                a_hat: Vec::with_capacity(categories),
                b_hat: Vec::with_capacity(categories),
                fallback: Vec::with_capacity(categories),
            };
            for _ in 0..categories {
                rec.theta.push(read_f64(&mut r)?);
                rec.omega.push(read_f64(&mut r)?);
                rec.a_hat.push(read_f64(&mut r)?);
                rec.b_hat.push(read_f64(&mut r)?);
                let mut code = [0u8; 1];
                r.read_exact(&mut code)?;
                rec.fallback.push(Fallback::from_code(code[0]).ok_or_else(|| bad("bad fallback code"))?);
            }
            records.push(rec);
        }
        Ok(ChainTrace { categories, records })
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

/// Runs `burn_in` iterations, then `iterations` more, keeping every `thin`-th.
#[allow(clippy::too_many_arguments)]
pub fn run_chain<S: EstimateSource + ?Sized>(
    stream: &mut RngStream,
    initial: GammaChainState,
    kernel: Kernel,
    schedule: &StepsizeSchedule,
    source: &mut S,
    iterations: u64,
    burn_in: u64,
    thin: u64,
) -> Result<ChainTrace> {
    if thin == 0 {
        return Err(domain("thin must be positive"));
    }
    if initial.theta.len() != source.categories() {
        return Err(domain("initial state has the wrong number of categories"));
    }
    let mut state = initial;
    state.kernel = kernel.kind;
    let mut trace = ChainTrace { categories: state.theta.len(), records: Vec::new() };
    for m in 0..burn_in + iterations {
        let h = schedule.at(state.iteration);
        let est = source.estimate(stream, kernel.kind)?;
        let fallback = kernel.advance(stream, &mut state.theta, &est, h)?;
        state.iteration += 1;
        if m >= burn_in && (m - burn_in + 1).is_multiple_of(thin) {
            let k = state.theta.len();
            trace.records.push(TraceRecord {
                iter: state.iteration,
                h,
                omega: to_simplex(&state.theta)?,
                theta: state.theta.clone(),
                b_hat: (0..k).map(|j| est.b_hat_at(j)).collect(),
                a_hat: est.a_hat,
                fallback,
            });
        }
    }
    Ok(trace)
}
