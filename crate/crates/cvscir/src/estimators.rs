//! Minibatch estimates of the Gamma posterior parameters.
//!
//! With data z_i and a Gamma(α, 1) prior per category, θ_k | z ~ Gamma(a_k, 1)
//! where a_k = α_k + Σ_i z_ik. The simple estimator replaces the sum with a
//! scaled subsample sum â_k. The control-variate estimator anchors the
//! gradient at the mode a_k - 1 and turns into the pair (â_k, b̂_k) with
//! b̂_k = (â_k - 1)/(a_k - 1), i.e. a Gamma(â_k, b̂_k) target.

use crate::error::{domain, Result};

/// Full-data totals Σ_i z_ik with the prior.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalCounts {
    totals: Vec<f64>,
    n_data: usize,
    alpha: Vec<f64>,
}

impl CategoricalCounts {
    pub fn new(totals: Vec<f64>, n_data: usize, alpha: Vec<f64>) -> Result<Self> {
        if totals.len() != alpha.len() {
            return Err(domain("totals and alpha lengths differ"));
        }
        if n_data == 0 {
            return Err(domain("n_data must be positive"));
        }
        if totals.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(domain("category totals must be finite and non-negative"));
        }
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(domain("prior alpha must be positive"));
        }
        Ok(CategoricalCounts { totals, n_data, alpha })
    }

    /// Totals computed from per-datum data.
    pub fn from_data<D: PerDatumCounts + ?Sized>(data: &D, alpha: Vec<f64>) -> Result<Self> {
        let mut totals = vec![0.0; data.categories()];
        for i in 0..data.n_data() {
            data.accumulate(i, &mut totals);
        }
        Self::new(totals, data.n_data(), alpha)
    }

    pub fn categories(&self) -> usize {
        self.totals.len()
    }

    pub fn n_data(&self) -> usize {
        self.n_data
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Posterior shapes a_k = α_k + Σ_i z_ik.
    pub fn posterior(&self) -> Vec<f64> {
        self.alpha.iter().zip(&self.totals).map(|(a, t)| a + t).collect()
    }
}

/// Access to the category counts of individual data points.
pub trait PerDatumCounts: Sync {
    fn n_data(&self) -> usize;
    fn categories(&self) -> usize;
    /// Adds the counts of datum `i` into `out`.
    fn accumulate(&self, i: usize, out: &mut [f64]);
}

/// One category label per datum (multinomial observations).
#[derive(Clone, Debug)]
pub struct LabelledData {
    labels: Vec<usize>,
    k: usize,
}

impl LabelledData {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(domain(format!("label {bad} out of range for {k} categories")));
        }
        Ok(LabelledData { labels, k })
    }

    /// `totals[k]` data points labelled k, in category order.
    pub fn from_totals(totals: &[usize]) -> Self {
        let labels = totals
            .iter()
            .enumerate()
            .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
            .collect();
        LabelledData { labels, k: totals.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

impl PerDatumCounts for LabelledData {
    fn n_data(&self) -> usize {
        self.labels.len()
    }

    fn categories(&self) -> usize {
        self.k
    }

    fn accumulate(&self, i: usize, out: &mut [f64]) {
        out[self.labels[i]] += 1.0;
    }
}

/// Sparse (category, count) lists per datum.
#[derive(Clone, Debug)]
pub struct SparseCountData {
    rows: Vec<Vec<(usize, f64)>>,
    k: usize,
}

impl SparseCountData {
    pub fn new(rows: Vec<Vec<(usize, f64)>>, k: usize) -> Result<Self> {
        for row in &rows {
            for &(c, v) in row {
                if c >= k || !(v >= 0.0) {
                    return Err(domain(format!("bad entry ({c}, {v}) for {k} categories")));
                }
            }
        }
        Ok(SparseCountData { rows, k })
    }
}

impl PerDatumCounts for SparseCountData {
    fn n_data(&self) -> usize {
        self.rows.len()
    }

    fn categories(&self) -> usize {
        self.k
    }

    fn accumulate(&self, i: usize, out: &mut [f64]) {
        for &(c, v) in &self.rows[i] {
            out[c] += v;
        }
    }
}

/// How a category can be driven by the control-variate estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CvStatus {
    /// Simple estimator; no b̂.
    Simple,
    /// b̂ > 0: usable by both parametrizations.
    Valid,
    /// b̂ ≤ 0 with a mode above zero: the main parametrization needs a fallback.
    NonPositiveScale,
    /// a ≤ 1, the mode is not interior; the control variate is switched off.
    SparseMode,
    /// a = 1 exactly, b̂ undefined.
    UnitMode,
}

/// Mode anchor a_k - 1 used by the control variate, with its age in iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSnapshot {
    pub mode: Vec<f64>,
    pub staleness: u64,
}

impl ModeSnapshot {
    pub fn from_posterior(a: &[f64]) -> Self {
        ModeSnapshot { mode: a.iter().map(|a| a - 1.0).collect(), staleness: 0 }
    }

    pub fn tick(&mut self) {
        self.staleness += 1;
    }
}

pub fn refresh_mode_snapshot(counts: &CategoricalCounts) -> ModeSnapshot {
    ModeSnapshot::from_posterior(&counts.posterior())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinibatchEstimate {
    pub a_hat: Vec<f64>,
    /// `None` for the simple estimator; NaN entries where b̂ is undefined.
    pub b_hat: Option<Vec<f64>>,
    pub status: Vec<CvStatus>,
    pub subsample: Vec<usize>,
    pub mode_snapshot: Vec<f64>,
    pub staleness: u64,
}

impl MinibatchEstimate {
    /// Full-data estimate: â = a and no b̂.
    pub fn exact(a: Vec<f64>) -> Self {
        let k = a.len();
        MinibatchEstimate {
            a_hat: a,
            b_hat: None,
            status: vec![CvStatus::Simple; k],
            subsample: Vec::new(),
            mode_snapshot: Vec::new(),
            staleness: 0,
        }
    }

    pub fn categories(&self) -> usize {
        self.a_hat.len()
    }

    /// b̂_k, or NaN when there is none.
    pub fn b_hat_at(&self, k: usize) -> f64 {
        self.b_hat.as_ref().map_or(f64::NAN, |b| b[k])
    }

    /// The rate b driving category k: b̂ where the control variate is active, else 1.
    pub fn rate_at(&self, k: usize) -> f64 {
        match self.status[k] {
            CvStatus::Valid | CvStatus::NonPositiveScale => self.b_hat_at(k),
            _ => 1.0,
        }
    }
}

fn check_subsample(subsample: &[usize], n_data: usize) -> Result<()> {
    if subsample.is_empty() {
        return Err(domain("empty subsample"));
    }
    if subsample.len() > n_data {
        return Err(domain("subsample larger than the data set"));
    }
    if let Some(&bad) = subsample.iter().find(|&&i| i >= n_data) {
        return Err(domain(format!("subsample index {bad} out of range")));
    }
    Ok(())
}

/// â_k = α_k + (N/n) Σ_{i∈S} z_ik.
fn scaled_subsample_sum<D: PerDatumCounts + ?Sized>(
    data: &D,
    counts: &CategoricalCounts,
    subsample: &[usize],
) -> Result<Vec<f64>> {
    if data.n_data() != counts.n_data() || data.categories() != counts.categories() {
        return Err(domain("data and counts disagree on N or K"));
    }
    check_subsample(subsample, counts.n_data())?;
    let mut sum = vec![0.0; counts.categories()];
    for &i in subsample {
        data.accumulate(i, &mut sum);
    }
    let scale = counts.n_data() as f64 / subsample.len() as f64;
    Ok(counts.alpha().iter().zip(&sum).map(|(a, s)| a + scale * s).collect())
}

pub fn simple_estimate<D: PerDatumCounts + ?Sized>(
    data: &D,
    counts: &CategoricalCounts,
    subsample: &[usize],
) -> Result<MinibatchEstimate> {
    let a_hat = scaled_subsample_sum(data, counts, subsample)?;
    let k = a_hat.len();
    Ok(MinibatchEstimate {
        a_hat,
        b_hat: None,
        status: vec![CvStatus::Simple; k],
        subsample: subsample.to_vec(),
        mode_snapshot: Vec::new(),
        staleness: 0,
    })
}

/// b̂_k = (â_k - 1)/mode_k with the category status.
pub fn control_variate_rates(a_hat: &[f64], mode: &[f64]) -> (Vec<f64>, Vec<CvStatus>) {
    a_hat
        .iter()
        .zip(mode)
        .map(|(&ah, &m)| {
            if m == 0.0 {
                (f64::NAN, CvStatus::UnitMode)
            } else {
                let b = (ah - 1.0) / m;
                let status = if m < 0.0 {
                    CvStatus::SparseMode
                } else if b > 0.0 {
                    CvStatus::Valid
                } else {
                    CvStatus::NonPositiveScale
                };
                (b, status)
            }
        })
        .unzip()
}

pub fn cv_estimate<D: PerDatumCounts + ?Sized>(
    data: &D,
    counts: &CategoricalCounts,
    snapshot: &ModeSnapshot,
    subsample: &[usize],
) -> Result<MinibatchEstimate> {
    if snapshot.mode.len() != counts.categories() {
        return Err(domain("mode snapshot has the wrong length"));
    }
    let a_hat = scaled_subsample_sum(data, counts, subsample)?;
    let (b_hat, status) = control_variate_rates(&a_hat, &snapshot.mode);
    Ok(MinibatchEstimate {
        a_hat,
        b_hat: Some(b_hat),
        status,
        subsample: subsample.to_vec(),
        mode_snapshot: snapshot.mode.clone(),
        staleness: snapshot.staleness,
    })
}

/// Per-category values of the stochastic potential gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientValue(pub Vec<f64>);

/// -(â_k - 1)/θ_k + b_k, with b_k = b̂_k where the control variate is active
/// and 1 (the simple estimator) otherwise.
pub fn cv_gradient(theta: &[f64], est: &MinibatchEstimate) -> Result<GradientValue> {
    if theta.len() != est.categories() {
        return Err(domain("theta and estimate lengths differ"));
    }
    theta
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if !(t > 0.0) {
                return Err(domain(format!("theta[{k}] = {t} is not positive")));
            }
            Ok(-(est.a_hat[k] - 1.0) / t + est.rate_at(k))
        })
        .collect::<Result<Vec<_>>>()
        .map(GradientValue)
}

/// U'_i(θ) for one datum: derivative of -(1/N) log p(θ) - z log θ under the
/// Gamma(α, 1) prior.
pub fn datum_gradient(theta: f64, z: f64, alpha: f64, n_data: usize) -> f64 {
    let n = n_data as f64;
    -((alpha - 1.0) / n + z) / theta + 1.0 / n
}
