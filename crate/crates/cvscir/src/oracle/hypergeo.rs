//! Law of the scaled subsample sum â = α + (N/n) Z, Z ~ HyperGeo(N, Np, n).

use statrs::function::factorial::ln_binomial;

use crate::error::{domain, Result};
use crate::rng::{Hypergeometric, RngStream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinibatchLaw {
    /// Population size N.
    pub population: u64,
    /// Number of positive data Np = Σ z_i.
    pub successes: u64,
    /// Subsample size n.
    pub draws: u64,
    pub alpha: f64,
}

impl MinibatchLaw {
    pub fn new(population: u64, successes: u64, draws: u64, alpha: f64) -> Result<Self> {
        if population == 0 || successes > population {
            return Err(domain(format!("need 0 <= Np <= N with N > 0, got N={population}, Np={successes}")));
        }
        if draws == 0 || draws > population {
            return Err(domain(format!("need 1 <= n <= N, got n={draws}")));
        }
        if !(alpha > 0.0) {
            return Err(domain("alpha must be positive"));
        }
        Ok(MinibatchLaw { population, successes, draws, alpha })
    }

    /// From the positive fraction p; Np must be an integer.
    pub fn from_fraction(population: u64, p: f64, draws: u64, alpha: f64) -> Result<Self> {
        let np = p * population as f64;
        let rounded = np.round();
        if !(0.0..=1.0).contains(&p) || (np - rounded).abs() > 1e-9 * population as f64 {
            return Err(domain(format!("p·N = {np} is not a count")));
        }
        Self::new(population, rounded as u64, draws, alpha)
    }

    pub fn p(&self) -> f64 {
        self.successes as f64 / self.population as f64
    }

    /// Full-data shape a = α + Np.
    pub fn a(&self) -> f64 {
        self.alpha + self.successes as f64
    }

    /// N/n.
    pub fn scale(&self) -> f64 {
        self.population as f64 / self.draws as f64
    }

    pub fn a_hat_of(&self, z: u64) -> f64 {
        self.alpha + self.scale() * z as f64
    }

    pub fn sampler(&self) -> Hypergeometric {
        Hypergeometric::new(self.population, self.successes, self.draws).expect("validated law")
    }

    pub fn sample_a_hat(&self, sampler: &Hypergeometric, stream: &mut RngStream) -> f64 {
        self.a_hat_of(sampler.sample(stream))
    }

    /// Support of Z.
    pub fn support(&self) -> std::ops::RangeInclusive<u64> {
        let lo = self.draws.saturating_sub(self.population - self.successes);
        lo..=self.draws.min(self.successes)
    }

    pub fn support_size(&self) -> u64 {
        let r = self.support();
        r.end() - r.start() + 1
    }

    /// (â, P) over the support.
    pub fn a_hat_distribution(&self) -> Vec<(f64, f64)> {
        let s = self.sampler();
        s.pmf()
            .into_iter()
            .enumerate()
            .map(|(i, p)| (self.a_hat_of(s.lower() + i as u64), p))
            .collect()
    }

    fn ln_pmf(&self, z: u64) -> f64 {
        let (nn, k, n) = (self.population, self.successes, self.draws);
        ln_binomial(k, z) + ln_binomial(nn - k, n - z) - ln_binomial(nn, n)
    }
}

/// Var[â] = (N²/n) p(1-p) (N-n)/(N-1).
pub fn hypergeo_variance(law: &MinibatchLaw) -> f64 {
    let nn = law.population as f64;
    let n = law.draws as f64;
    if law.population == 1 {
        return 0.0;
    }
    let p = law.p();
    nn * nn / n * p * (1.0 - p) * (nn - n) / (nn - 1.0)
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// ln E[e^{sZ}] by summing over the support. The pmf is renormalised by its
/// own total, which absorbs the rounding of the log-binomials at large N.
pub fn ln_mgf_z_direct(law: &MinibatchLaw, s: f64) -> f64 {
    let ln_mass = log_sum_exp(law.support().map(|z| law.ln_pmf(z)));
    log_sum_exp(law.support().map(|z| law.ln_pmf(z) + s * z as f64)) - ln_mass
}

/// ln E[e^{sZ}] through the terminating Gauss series
/// C(N-Np, n)/C(N, n) · ₂F₁(-n, -Np; N-Np-n+1; e^s).
///
/// When n > N - Np the lower parameter is a non-positive integer; the sum is
/// then re-indexed from the support minimum L, giving
/// P(Z=L) e^{sL} ₂F₁(-(n-L), -(Np-L); L+1; e^s).
pub fn ln_mgf_z_series(law: &MinibatchLaw, s: f64) -> f64 {
    let (nn, k, n) = (law.population, law.successes, law.draws);
    let lo = *law.support().start();
    let terms = law.support_size();
    let a = (n - lo) as f64;
    let b = (k - lo) as f64;
    let c = (nn as i64 - k as i64 - n as i64).unsigned_abs() as f64 + 1.0;
    // Term j of the series, in logs: ln[(−a)_j (−b)_j / ((c)_j j!)] + j s.
    let mut log_t = 0.0;
    let mut logs = Vec::with_capacity(terms as usize);
    logs.push(0.0);
    for j in 0..terms - 1 {
        let j = j as f64;
        log_t += ((a - j) * (b - j)).ln() - ((c + j) * (j + 1.0)).ln() + s;
        logs.push(log_t);
    }
    let prefactor = ln_binomial(k, lo) + ln_binomial(nn - k, n - lo) - ln_binomial(nn, n);
    prefactor + s * lo as f64 + log_sum_exp(logs.into_iter())
}

/// M_â(t) = e^{αt} M_Z(tN/n), by direct summation.
pub fn hypergeo_mgf(law: &MinibatchLaw, t: f64) -> f64 {
    (law.alpha * t + ln_mgf_z_direct(law, t * law.scale())).exp()
}

/// M_â(t) through the ₂F₁ series.
pub fn hypergeo_mgf_series(law: &MinibatchLaw, t: f64) -> f64 {
    (law.alpha * t + ln_mgf_z_series(law, t * law.scale())).exp()
}
