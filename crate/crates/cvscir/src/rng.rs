//! Seedable variate generation.
//!
//! Every stream is a ChaCha8 keystream selected by `(seed, stream_id)`: the seed
//! fixes the key and the stream id the 64-bit nonce, so distinct ids never
//! overlap and the output is identical on every platform.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use statrs::function::factorial::ln_binomial;

use crate::error::{domain, Result};

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// A child stream under the same seed, keyed by `index`.
    ///
    /// Used to hand one stream to each chain or document so results do not
    /// depend on scheduling.
    pub fn substream(&self, index: u64) -> RngStream {
        let id = splitmix64(splitmix64(self.stream_id) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        RngStream::new(self.seed, id)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Gamma(shape, rate), density ∝ x^{shape-1} e^{-rate x}.
///
/// Shapes below one use the boost `Gamma(shape+1) * U^{1/shape}`, which is exact.
pub fn sample_gamma(stream: &mut RngStream, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(domain(format!("gamma shape must be positive, got {shape}")));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(domain(format!("gamma rate must be positive, got {rate}")));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| domain(e.to_string()))?;
    Ok(g.sample(stream))
}

pub fn sample_poisson(stream: &mut RngStream, lambda: f64) -> Result<u64> {
    if lambda == 0.0 {
        return Ok(0);
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(domain(format!("poisson mean must be non-negative, got {lambda}")));
    }
    let p = Poisson::new(lambda).map_err(|e| domain(e.to_string()))?;
    let x: f64 = p.sample(stream);
    Ok(x as u64)
}

/// χ²(ν, μ) parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoncentralChiSq {
    dof: f64,
    noncentrality: f64,
}

impl NoncentralChiSq {
    pub fn new(dof: f64, noncentrality: f64) -> Result<Self> {
        if !(dof > 0.0 && dof.is_finite()) {
            return Err(domain(format!("chi-squared dof must be positive, got {dof}")));
        }
        if !(noncentrality >= 0.0 && noncentrality.is_finite()) {
            return Err(domain(format!("non-centrality must be non-negative, got {noncentrality}")));
        }
        if 0.5 * noncentrality >= Poisson::<f64>::MAX_LAMBDA {
            return Err(domain(format!("non-centrality {noncentrality} too large to sample exactly")));
        }
        Ok(NoncentralChiSq { dof, noncentrality })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn noncentrality(&self) -> f64 {
        self.noncentrality
    }

    pub fn mean(&self) -> f64 {
        self.dof + self.noncentrality
    }

    pub fn variance(&self) -> f64 {
        2.0 * (self.dof + 2.0 * self.noncentrality)
    }
}

/// Poisson mixture: J ~ Poisson(μ/2), then Gamma((ν+2J)/2, rate 1/2).
pub fn sample_noncentral_chisq(stream: &mut RngStream, params: NoncentralChiSq) -> f64 {
    let j = sample_poisson(stream, 0.5 * params.noncentrality).expect("validated non-centrality");
    let shape = 0.5 * params.dof + j as f64;
    sample_gamma(stream, shape, 0.5).expect("validated dof")
}

/// HyperGeo(N, K, n): successes in `n` draws without replacement from `N`
/// items of which `K` are successes. Holds the full CDF so repeated draws are
/// an exact inverse-CDF lookup.
#[derive(Clone, Debug)]
pub struct Hypergeometric {
    population: u64,
    successes: u64,
    draws: u64,
    lo: u64,
    cdf: Vec<f64>,
}

impl Hypergeometric {
    pub fn new(population: u64, successes: u64, draws: u64) -> Result<Self> {
        if successes > population {
            return Err(domain(format!("successes {successes} exceed population {population}")));
        }
        if draws == 0 || draws > population {
            return Err(domain(format!("draws must be in 1..={population}, got {draws}")));
        }
        let lo = draws.saturating_sub(population - successes);
        let hi = draws.min(successes);
        let ln_total = ln_binomial(population, draws);
        let mut cdf = Vec::with_capacity((hi - lo + 1) as usize);
        let mut acc = 0.0;
        for k in lo..=hi {
            let lp = ln_binomial(successes, k) + ln_binomial(population - successes, draws - k) - ln_total;
            acc += lp.exp();
            cdf.push(acc);
        }
        // Absorb rounding so the last bucket always catches u < 1.
        let total = acc;
        for c in cdf.iter_mut() {
            *c /= total;
        }
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Hypergeometric { population, successes, draws, lo, cdf })
    }

    pub fn population(&self) -> u64 {
        self.population
    }

    pub fn successes(&self) -> u64 {
        self.successes
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Smallest value in the support.
    pub fn lower(&self) -> u64 {
        self.lo
    }

    /// Normalised probabilities over `lower()..=lower()+len-1`.
    pub fn pmf(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    pub fn sample(&self, stream: &mut RngStream) -> u64 {
        let u = stream.uniform();
        let idx = self.cdf.partition_point(|&c| c <= u);
        self.lo + idx.min(self.cdf.len() - 1) as u64
    }
}

pub fn sample_hypergeometric(stream: &mut RngStream, population: u64, successes: u64, draws: u64) -> Result<u64> {
    Ok(Hypergeometric::new(population, successes, draws)?.sample(stream))
}

/// Uniform `sample_size`-subset of `0..population_size`, sorted ascending.
pub fn sample_without_replacement(stream: &mut RngStream, population_size: usize, sample_size: usize) -> Result<Vec<usize>> {
    if sample_size > population_size {
        return Err(domain(format!(
            "cannot draw {sample_size} items from a population of {population_size}"
        )));
    }
    let mut idx = rand::seq::index::sample(stream, population_size, sample_size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}
