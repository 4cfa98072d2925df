//! Latent Dirichlet allocation on the Gamma representation of the topics.
//!
//! Each topic-word mass θ_kw is one CIR-type chain; ω_k = θ_k/Σ_w θ_kw.
//! Given ω, topic assignments of a document are Gibbs-sampled and the chains
//! are driven by expected counts:
//!
//! - CIR kernels: â_kw = β + (|D|/|D_t|) Σ_{d∈D_t} E[n_dkw], the conditional
//!   Dirichlet posterior given z;
//! - SGRLD: drift target β + (|D|/|D_t|) Σ_{d∈D_t} E[n_dkw - ω_kw n_dk·], the
//!   expanded-mean gradient.
//!
//! The control variate anchors at a_kw - 1 with a_kw = β + scaled expected
//! counts over a larger refresh set, recomputed every `refresh_every` steps.

use rayon::prelude::*;

use crate::corpus::{Corpus, HeldoutDoc};
use crate::error::{domain, Error, Result};
use crate::estimators::{control_variate_rates, CvStatus};
use crate::rng::{sample_gamma, sample_without_replacement, RngStream};
use crate::samplers::{Fallback, FallbackPolicy, Kernel, KernelKind, StepsizeSchedule};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdaConfig {
    pub topics: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Gibbs sweeps per document; the second half is averaged.
    pub gibbs_samples: usize,
    pub minibatch_docs: usize,
    /// ℓ: control-variate anchor refresh period in iterations.
    pub refresh_every: u64,
    pub refresh_docs: usize,
    pub schedule: StepsizeSchedule,
    pub fallback: FallbackPolicy,
    /// Smallest anchor mode a_kw - 1 at which the control variate is used;
    /// below it the pair is driven by the simple estimate. `None` means the
    /// minibatch scale |D|/|D_t|, i.e. the pair is expected in every minibatch.
    ///
    /// Near a_kw = 1 the rate b̂ = (â-1)/(a-1) swings over orders of
    /// magnitude; e^{-b̂h} with large negative b̂ then multiplies θ_kw by
    /// factors that overflow within a few steps.
    pub cv_min_mode: Option<f64>,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 50,
            alpha: 1.1,
            beta: 0.1,
            gibbs_samples: 200,
            minibatch_docs: 50,
            refresh_every: 5,
            refresh_docs: 1000,
            schedule: StepsizeSchedule { h0: 1.0, tau: 1000.0, kappa: 3.32 },
            fallback: FallbackPolicy::Alternative,
            cv_min_mode: None,
        }
    }
}

impl LdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 || self.gibbs_samples == 0 || self.minibatch_docs == 0 || self.refresh_docs == 0 {
            return Err(domain("topics, gibbs_samples, minibatch_docs and refresh_docs must be positive"));
        }
        if self.refresh_every == 0 {
            return Err(domain("refresh_every must be positive"));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(domain("alpha and beta must be positive"));
        }
        StepsizeSchedule::new(self.schedule.h0, self.schedule.tau, self.schedule.kappa)?;
        Ok(())
    }
}

/// A document as distinct words plus, per token, the index of its word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LdaDoc {
    words: Vec<usize>,
    slots: Vec<u32>,
}

impl LdaDoc {
    pub fn from_tokens(tokens: &[usize]) -> Self {
        let mut words = tokens.to_vec();
        words.sort_unstable();
        words.dedup();
        let slots = tokens.iter().map(|w| words.binary_search(w).unwrap() as u32).collect();
        LdaDoc { words, slots }
    }

    pub fn from_sparse(doc: &[(u32, u32)]) -> Self {
        let words = doc.iter().map(|&(w, _)| w as usize).collect();
        let slots = doc
            .iter()
            .enumerate()
            .flat_map(|(s, &(_, c))| std::iter::repeat_n(s as u32, c as usize))
            .collect();
        LdaDoc { words, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Distinct word ids, ascending.
    pub fn words(&self) -> &[usize] {
        &self.words
    }

    pub fn token_word(&self, i: usize) -> usize {
        self.words[self.slots[i] as usize]
    }
}

pub fn corpus_docs(corpus: &Corpus) -> Vec<LdaDoc> {
    corpus.docs().iter().map(|d| LdaDoc::from_sparse(d)).collect()
}

/// Topic-word probabilities ω laid out word-major for the Gibbs inner loop.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicWordProbs {
    k: usize,
    w: usize,
    by_word: Vec<f64>,
}

impl TopicWordProbs {
    /// From a K×W row-major matrix of probabilities.
    pub fn from_omega(omega: &[f64], k: usize, w: usize) -> Result<Self> {
        if omega.len() != k * w {
            return Err(domain("omega has the wrong size"));
        }
        let mut by_word = vec![0.0; k * w];
        for t in 0..k {
            for v in 0..w {
                by_word[v * k + t] = omega[t * w + v];
            }
        }
        Ok(TopicWordProbs { k, w, by_word })
    }

    pub fn topics(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.w
    }

    pub fn get(&self, topic: usize, word: usize) -> f64 {
        self.by_word[word * self.k + topic]
    }

    fn column(&self, word: usize) -> &[f64] {
        &self.by_word[word * self.k..(word + 1) * self.k]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocAssignments {
    pub z: Vec<usize>,
    pub n_dk: Vec<u32>,
    /// Counts per (distinct word slot, topic), slot-major.
    pub n_dkw: Vec<u32>,
    k: usize,
}

impl DocAssignments {
    pub fn from_labels(doc: &LdaDoc, k: usize, z: Vec<usize>) -> Result<Self> {
        if z.len() != doc.len() || z.iter().any(|&t| t >= k) {
            return Err(domain("labels do not match the document or topic count"));
        }
        let mut a = DocAssignments { n_dk: vec![0; k], n_dkw: vec![0; doc.words.len() * k], z, k };
        for (i, &t) in a.z.iter().enumerate() {
            a.n_dk[t] += 1;
            a.n_dkw[doc.slots[i] as usize * k + t] += 1;
        }
        Ok(a)
    }

    pub fn random(stream: &mut RngStream, doc: &LdaDoc, k: usize) -> Self {
        let z = (0..doc.len()).map(|_| stream.index(k)).collect();
        Self::from_labels(doc, k, z).expect("labels in range")
    }

    /// n_dkw for a word id (0 when the word is absent).
    pub fn count(&self, doc: &LdaDoc, topic: usize, word: usize) -> u32 {
        doc.words.binary_search(&word).map_or(0, |s| self.n_dkw[s * self.k + topic])
    }

    /// n_dk· = Σ_w n_dkw and Σ_k n_dk· = length, and both agree with z.
    pub fn is_consistent(&self, doc: &LdaDoc) -> bool {
        match Self::from_labels(doc, self.k, self.z.clone()) {
            Ok(fresh) => fresh == *self,
            Err(_) => false,
        }
    }
}

/// Resamples every token from p(z_i = k | rest) ∝ (α + n_dk^{\i}) ω_{k,w_i}.
pub fn gibbs_topic_sweep(
    stream: &mut RngStream,
    doc: &LdaDoc,
    assign: &mut DocAssignments,
    probs: &TopicWordProbs,
    alpha: f64,
    sweeps: usize,
) -> Result<()> {
    let k = probs.k;
    if assign.k != k || assign.z.len() != doc.len() {
        return Err(domain("assignments do not match the document"));
    }
    let mut cum = vec![0.0; k];
    for _ in 0..sweeps {
        for i in 0..doc.len() {
            let slot = doc.slots[i] as usize;
            let col = probs.column(doc.words[slot]);
            let old = assign.z[i];
            assign.n_dk[old] -= 1;
            assign.n_dkw[slot * k + old] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                total += (alpha + assign.n_dk[t] as f64) * col[t];
                cum[t] = total;
            }
            if !(total > 0.0) {
                return Err(Error::Degenerate(format!("word {} has zero probability under every topic", doc.words[slot])));
            }
            let u = stream.uniform() * total;
            let new = cum.iter().position(|&c| u < c).unwrap_or(k - 1);
            assign.z[i] = new;
            assign.n_dk[new] += 1;
            assign.n_dkw[slot * k + new] += 1;
        }
    }
    Ok(())
}

/// Gibbs averages of one document's counts.
#[derive(Clone, Debug, PartialEq)]
pub struct DocExpectation {
    /// E[n_dkw] per (slot, topic), slot-major.
    pub n_dkw: Vec<f64>,
    pub n_dk: Vec<f64>,
}

/// Random start, `sweeps` Gibbs sweeps, counts averaged over the last half.
pub fn sample_doc_expectation(
    stream: &mut RngStream,
    doc: &LdaDoc,
    probs: &TopicWordProbs,
    alpha: f64,
    sweeps: usize,
) -> Result<DocExpectation> {
    if sweeps == 0 {
        return Err(domain("need at least one Gibbs sweep"));
    }
    let k = probs.k;
    let mut assign = DocAssignments::random(stream, doc, k);
    let burn = sweeps / 2;
    gibbs_topic_sweep(stream, doc, &mut assign, probs, alpha, burn)?;
    let mut n_dkw = vec![0.0; assign.n_dkw.len()];
    let mut n_dk = vec![0.0; k];
    for _ in burn..sweeps {
        gibbs_topic_sweep(stream, doc, &mut assign, probs, alpha, 1)?;
        n_dkw.iter_mut().zip(&assign.n_dkw).for_each(|(a, &c)| *a += c as f64);
        n_dk.iter_mut().zip(&assign.n_dk).for_each(|(a, &c)| *a += c as f64);
    }
    let kept = (sweeps - burn) as f64;
    n_dkw.iter_mut().for_each(|x| *x /= kept);
    n_dk.iter_mut().for_each(|x| *x /= kept);
    Ok(DocExpectation { n_dkw, n_dk })
}

fn expectations_parallel(
    stream: &RngStream,
    docs: &[&LdaDoc],
    probs: &TopicWordProbs,
    alpha: f64,
    sweeps: usize,
) -> Result<Vec<DocExpectation>> {
    docs.par_iter()
        .enumerate()
        .map(|(i, doc)| sample_doc_expectation(&mut stream.substream(i as u64), doc, probs, alpha, sweeps))
        .collect()
}

/// Scaled minibatch sums behind the topic-word estimates, K×W row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicGradient {
    pub k: usize,
    pub w: usize,
    pub beta: f64,
    /// (|D|/|D_t|) Σ_d E[n_dkw].
    pub counts: Vec<f64>,
    /// (|D|/|D_t|) Σ_d E[n_dkw - ω_kw n_dk·].
    pub centred: Vec<f64>,
}

impl TopicGradient {
    /// â = β + scaled expected counts.
    pub fn a_hat(&self) -> Vec<f64> {
        self.counts.iter().map(|c| self.beta + c).collect()
    }

    /// Expanded-mean drift target β + scaled Σ ẑ.
    pub fn drift_target(&self) -> Vec<f64> {
        self.centred.iter().map(|c| self.beta + c).collect()
    }

    /// (â - 1)/θ - b with b = (â-1)/(a-1) from `anchor` counts where the
    /// control variate applies, else 1.
    pub fn value(&self, theta: &[f64], anchor: Option<&[f64]>) -> Vec<f64> {
        let a_hat = self.a_hat();
        let rates: Vec<f64> = match anchor {
            Some(c) => {
                let mode: Vec<f64> = c.iter().map(|x| self.beta + x - 1.0).collect();
                let (b, status) = control_variate_rates(&a_hat, &mode);
                b.iter()
                    .zip(&status)
                    .map(|(&b, s)| if matches!(s, CvStatus::Valid | CvStatus::NonPositiveScale) { b } else { 1.0 })
                    .collect()
            }
            None => vec![1.0; a_hat.len()],
        };
        theta.iter().zip(&a_hat).zip(&rates).map(|((t, a), b)| (a - 1.0) / t - b).collect()
    }
}

/// Sums Gibbs expectations over a minibatch and scales by |D|/|D_t|.
pub fn expected_count_gradient(
    docs: &[&LdaDoc],
    expectations: &[DocExpectation],
    probs: &TopicWordProbs,
    beta: f64,
    total_docs: usize,
) -> Result<TopicGradient> {
    if docs.len() != expectations.len() || docs.is_empty() {
        return Err(domain("need one expectation per minibatch document"));
    }
    let (k, w) = (probs.k, probs.w);
    let scale = total_docs as f64 / docs.len() as f64;
    let mut counts = vec![0.0; k * w];
    let mut topic_totals = vec![0.0; k];
    for (doc, ex) in docs.iter().zip(expectations) {
        for (s, &word) in doc.words.iter().enumerate() {
            if word >= w {
                return Err(domain(format!("word id {word} outside the vocabulary")));
            }
            for t in 0..k {
                counts[t * w + word] += scale * ex.n_dkw[s * k + t];
            }
        }
        topic_totals.iter_mut().zip(&ex.n_dk).for_each(|(a, n)| *a += scale * n);
    }
    let centred = (0..k * w).map(|i| counts[i] - probs.get(i / w, i % w) * topic_totals[i / w]).collect();
    Ok(TopicGradient { k, w, beta, counts, centred })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicState {
    pub k: usize,
    pub w: usize,
    /// θ_kw, K×W row-major.
    pub theta: Vec<f64>,
    /// Scaled expected counts over the last refresh set, K×W.
    pub full_counts_snapshot: Option<Vec<f64>>,
    pub staleness: u64,
}

impl TopicState {
    /// θ_kw iid Gamma(1, 1).
    pub fn random(stream: &mut RngStream, k: usize, w: usize) -> Result<Self> {
        let theta = (0..k * w).map(|_| sample_gamma(stream, 1.0, 1.0)).collect::<Result<_>>()?;
        Ok(TopicState { k, w, theta, full_counts_snapshot: None, staleness: 0 })
    }

    /// ω, K×W row-major.
    pub fn omega(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.theta.len());
        for (t, row) in self.theta.chunks(self.w).enumerate() {
            let total: f64 = row.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::Degenerate(format!("topic {t} has total mass {total}")));
            }
            out.extend(row.iter().map(|x| x / total));
        }
        Ok(out)
    }

    pub fn word_probs(&self) -> Result<TopicWordProbs> {
        TopicWordProbs::from_omega(&self.omega()?, self.k, self.w)
    }
}

/// Fallback tallies of one step, indexed none/alt/simple/disabled.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub h: f64,
    pub refreshed: bool,
    pub fallbacks: [u64; 4],
}

fn fallback_index(f: Fallback) -> usize {
    match f {
        Fallback::None => 0,
        Fallback::Alternative => 1,
        Fallback::Simple => 2,
        Fallback::Disabled => 3,
    }
}

/// Recomputes the control-variate anchor from a random refresh set.
pub fn refresh_snapshot(
    stream: &mut RngStream,
    state: &mut TopicState,
    corpus: &[LdaDoc],
    cfg: &LdaConfig,
) -> Result<()> {
    let probs = state.word_probs()?;
    let size = cfg.refresh_docs.min(corpus.len());
    let idx = sample_without_replacement(stream, corpus.len(), size)?;
    let docs: Vec<&LdaDoc> = idx.iter().map(|&d| &corpus[d]).collect();
    let ex = expectations_parallel(&stream.substream(0), &docs, &probs, cfg.alpha, cfg.gibbs_samples)?;
    let grad = expected_count_gradient(&docs, &ex, &probs, cfg.beta, corpus.len())?;
    state.full_counts_snapshot = Some(grad.counts);
    state.staleness = 0;
    Ok(())
}

/// One outer iteration m: Gibbs on a fresh minibatch, then one kernel step
/// per (k, w) at stepsize h_m.
pub fn lda_train_step(
    stream: &mut RngStream,
    state: &mut TopicState,
    corpus: &[LdaDoc],
    cfg: &LdaConfig,
    kernel: Kernel,
    m: u64,
) -> Result<StepStats> {
    if kernel.kind == KernelKind::ExactCir {
        return Err(domain("the exact CIR kernel needs full-data counts and is not available for LDA"));
    }
    if corpus.is_empty() {
        return Err(domain("empty training corpus"));
    }
    let mut stats = StepStats { h: cfg.schedule.at(m), ..Default::default() };
    if kernel.kind.uses_control_variate() {
        if state.full_counts_snapshot.is_none() || m.is_multiple_of(cfg.refresh_every) {
            refresh_snapshot(&mut stream.substream(0), state, corpus, cfg)?;
            stats.refreshed = true;
        } else {
            state.staleness += 1;
        }
    }
    let probs = state.word_probs()?;
    let size = cfg.minibatch_docs.min(corpus.len());
    let idx = sample_without_replacement(stream, corpus.len(), size)?;
    let docs: Vec<&LdaDoc> = idx.iter().map(|&d| &corpus[d]).collect();
    let ex = expectations_parallel(&stream.substream(1), &docs, &probs, cfg.alpha, cfg.gibbs_samples)?;
    let grad = expected_count_gradient(&docs, &ex, &probs, cfg.beta, corpus.len())?;

    let n = state.theta.len();
    let (a_hat, b_hat, status) = match kernel.kind {
        KernelKind::Sgrld => (grad.drift_target(), vec![f64::NAN; n], vec![CvStatus::Simple; n]),
        KernelKind::CvScirMain | KernelKind::CvScirAlt => {
            let a_hat = grad.a_hat();
            let anchor = state.full_counts_snapshot.as_ref().expect("refreshed above");
            let mode: Vec<f64> = anchor.iter().map(|c| cfg.beta + c - 1.0).collect();
            let (b, mut s) = control_variate_rates(&a_hat, &mode);
            let min_mode = cfg.cv_min_mode.unwrap_or(corpus.len() as f64 / size as f64);
            for (st, &md) in s.iter_mut().zip(&mode) {
                if md > 0.0 && md < min_mode {
                    *st = CvStatus::SparseMode;
                }
            }
            (a_hat, b, s)
        }
        _ => (grad.a_hat(), vec![f64::NAN; n], vec![CvStatus::Simple; n]),
    };
    for i in 0..n {
        let (next, tag) = kernel.step_category(stream, state.theta[i], a_hat[i], b_hat[i], status[i], stats.h)?;
        state.theta[i] = next;
        stats.fallbacks[fallback_index(tag)] += 1;
    }
    Ok(stats)
}

/// exp of minus the mean log predictive probability.
pub fn perplexity_from_probs(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(domain("no test tokens"));
    }
    if let Some(p) = probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(domain(format!("predictive probability {p} outside (0, 1]")));
    }
    let mean_log = probs.iter().map(|p| p.ln()).sum::<f64>() / probs.len() as f64;
    Ok((-mean_log).exp())
}

/// Document-completion perplexity averaged over a growing set of ω samples.
///
/// For each held-out document, assignments of its train tokens are Gibbs-
/// sampled given ω and each test token scores Σ_k η̂_k ω_kw with
/// η̂_k = (n_k^train + α)/(n^train + Kα); scores are averaged over the kept
/// sweeps and over all ω samples added so far.
#[derive(Clone, Debug)]
pub struct PerplexityEstimator {
    docs: Vec<(LdaDoc, Vec<usize>)>,
    sums: Vec<Vec<f64>>,
    samples: usize,
    dropped_tokens: usize,
    k: usize,
    alpha: f64,
    sweeps: usize,
}

impl PerplexityEstimator {
    /// Tokens with word ids at or above `vocab_size` are dropped and counted.
    pub fn new(heldout: &[HeldoutDoc], vocab_size: usize, k: usize, alpha: f64, sweeps: usize) -> Result<Self> {
        if sweeps == 0 || k == 0 {
            return Err(domain("need at least one sweep and one topic"));
        }
        let mut dropped = 0;
        let mut keep = |tokens: &[usize]| -> Vec<usize> {
            let kept: Vec<usize> = tokens.iter().copied().filter(|&w| w < vocab_size).collect();
            dropped += tokens.len() - kept.len();
            kept
        };
        let docs: Vec<(LdaDoc, Vec<usize>)> = heldout
            .iter()
            .map(|h| (LdaDoc::from_tokens(&keep(&h.train)), keep(&h.test)))
            .filter(|(_, test)| !test.is_empty())
            .collect();
        if docs.is_empty() {
            return Err(domain("the held-out set has no test tokens"));
        }
        let sums = docs.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(PerplexityEstimator { docs, sums, samples: 0, dropped_tokens: dropped, k, alpha, sweeps })
    }

    pub fn dropped_tokens(&self) -> usize {
        self.dropped_tokens
    }

    pub fn test_tokens(&self) -> usize {
        self.sums.iter().map(Vec::len).sum()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Predictive probabilities of every test token under one ω sample.
    pub fn predictive(&self, stream: &RngStream, probs: &TopicWordProbs) -> Result<Vec<Vec<f64>>> {
        if probs.k != self.k {
            return Err(domain("topic count mismatch"));
        }
        let (k, alpha, sweeps) = (self.k, self.alpha, self.sweeps);
        self.docs
            .par_iter()
            .enumerate()
            .map(|(i, (train, test))| {
                let mut stream = stream.substream(i as u64);
                let mut out = vec![0.0; test.len()];
                let mut assign = DocAssignments::random(&mut stream, train, k);
                let burn = sweeps / 2;
                gibbs_topic_sweep(&mut stream, train, &mut assign, probs, alpha, burn)?;
                let denom = train.len() as f64 + k as f64 * alpha;
                for _ in burn..sweeps {
                    gibbs_topic_sweep(&mut stream, train, &mut assign, probs, alpha, 1)?;
                    for (o, &w) in out.iter_mut().zip(test) {
                        *o += (0..k).map(|t| (assign.n_dk[t] as f64 + alpha) / denom * probs.get(t, w)).sum::<f64>();
                    }
                }
                let kept = (sweeps - burn) as f64;
                out.iter_mut().for_each(|o| *o /= kept);
                Ok(out)
            })
            .collect()
    }

    pub fn add_sample(&mut self, stream: &RngStream, probs: &TopicWordProbs) -> Result<()> {
        let p = self.predictive(stream, probs)?;
        for (sum, doc) in self.sums.iter_mut().zip(p) {
            sum.iter_mut().zip(doc).for_each(|(s, x)| *s += x);
        }
        self.samples += 1;
        Ok(())
    }

    pub fn perplexity(&self) -> Result<f64> {
        if self.samples == 0 {
            return Err(domain("no ω samples added"));
        }
        let n = self.samples as f64;
        let probs: Vec<f64> = self.sums.iter().flatten().map(|s| s / n).collect();
        perplexity_from_probs(&probs)
    }
}

/// Perplexity of held-out documents averaged over several ω samples (K×W each).
pub fn perplexity(
    stream: &RngStream,
    omega_samples: &[Vec<f64>],
    heldout: &[HeldoutDoc],
    k: usize,
    vocab_size: usize,
    alpha: f64,
    sweeps: usize,
) -> Result<f64> {
    let mut est = PerplexityEstimator::new(heldout, vocab_size, k, alpha, sweeps)?;
    for (i, omega) in omega_samples.iter().enumerate() {
        est.add_sample(&stream.substream(i as u64), &TopicWordProbs::from_omega(omega, k, vocab_size)?)?;
    }
    est.perplexity()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Evaluate after every `every` iterations.
    pub every: u64,
    pub gibbs_sweeps: usize,
    /// Evaluations after this iteration are pooled into a running average;
    /// earlier ones use the current sample alone.
    pub burn_in: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerplexityRecord {
    pub iter: u64,
    pub docs_seen: u64,
    pub perplexity: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct LdaRun {
    pub records: Vec<PerplexityRecord>,
    pub state: TopicState,
    /// Fallback tallies over the whole run, indexed none/alt/simple/disabled.
    pub fallbacks: [u64; 4],
    pub dropped_tokens: usize,
}

const INIT_STREAM: u64 = 1;
const TRAIN_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

#[allow(clippy::too_many_arguments)]
pub fn train_lda(
    seed: u64,
    corpus: &[LdaDoc],
    vocab_size: usize,
    heldout: &[HeldoutDoc],
    cfg: &LdaConfig,
    kernel: Kernel,
    iterations: u64,
    eval: &EvalConfig,
) -> Result<LdaRun> {
    cfg.validate()?;
    if eval.every == 0 || eval.gibbs_sweeps == 0 {
        return Err(domain("evaluation interval and sweeps must be positive"));
    }
    let mut state = TopicState::random(&mut RngStream::new(seed, INIT_STREAM), cfg.topics, vocab_size)?;
    let train_stream = RngStream::new(seed, TRAIN_STREAM);
    let eval_stream = RngStream::new(seed, EVAL_STREAM);
    let mut pooled = PerplexityEstimator::new(heldout, vocab_size, cfg.topics, cfg.alpha, eval.gibbs_sweeps)?;
    let mut records = Vec::new();
    let mut fallbacks = [0u64; 4];
    for m in 0..iterations {
        let stats = lda_train_step(&mut train_stream.substream(m), &mut state, corpus, cfg, kernel, m)?;
        fallbacks.iter_mut().zip(stats.fallbacks).for_each(|(a, b)| *a += b);
        let iter = m + 1;
        if iter % eval.every != 0 {
            continue;
        }
        let probs = state.word_probs()?;
        let es = eval_stream.substream(iter);
        let value = if iter > eval.burn_in {
            pooled.add_sample(&es, &probs)?;
            pooled.perplexity()?
        } else {
            let mut single = pooled.clone();
            single.sums.iter_mut().flatten().for_each(|s| *s = 0.0);
            single.samples = 0;
            single.add_sample(&es, &probs)?;
            single.perplexity()?
        };
        records.push(PerplexityRecord {
            iter,
            docs_seen: iter * cfg.minibatch_docs.min(corpus.len()) as u64,
            perplexity: value,
            seed,
        });
    }
    Ok(LdaRun { records, state, fallbacks, dropped_tokens: pooled.dropped_tokens })
}
