//! Bag-of-words corpora.
//!
//! File layout: three header lines `D`, `W`, `NNZ`, then one
//! `docID wordID count` triple per line with 1-indexed ids. A vocabulary file
//! holds one token per line, line i naming word i.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;

use crate::error::{domain, Error, Result};
use crate::rng::{sample_gamma, sample_poisson, sample_without_replacement, RngStream};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Vec<(u32, u32)>>,
    vocab_size: usize,
}

impl Corpus {
    /// Documents as sorted `(word_id, count)` lists.
    pub fn new(docs: Vec<Vec<(u32, u32)>>, vocab_size: usize) -> Result<Self> {
        for (d, doc) in docs.iter().enumerate() {
            for (i, &(w, c)) in doc.iter().enumerate() {
                if w as usize >= vocab_size {
                    return Err(Error::Validation(format!("document {d}: word id {w} >= vocabulary size {vocab_size}")));
                }
                if c == 0 {
                    return Err(Error::Validation(format!("document {d}: zero count for word {w}")));
                }
                if i > 0 && doc[i - 1].0 >= w {
                    return Err(Error::Validation(format!("document {d}: word ids not strictly increasing")));
                }
            }
        }
        Ok(Corpus { docs, vocab_size })
    }

    /// Builds documents from token lists.
    pub fn from_tokens(docs: &[Vec<usize>], vocab_size: usize) -> Result<Self> {
        let sparse = docs
            .iter()
            .map(|tokens| {
                let mut counts = BTreeMap::new();
                for &w in tokens {
                    *counts.entry(w as u32).or_insert(0u32) += 1;
                }
                counts.into_iter().collect()
            })
            .collect();
        Corpus::new(sparse, vocab_size)
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn docs(&self) -> &[Vec<(u32, u32)>] {
        &self.docs
    }

    pub fn nnz(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    pub fn doc_len(&self, d: usize) -> usize {
        self.docs[d].iter().map(|&(_, c)| c as usize).sum()
    }

    pub fn total_tokens(&self) -> usize {
        (0..self.docs.len()).map(|d| self.doc_len(d)).sum()
    }

    /// Document `d` expanded to one word id per token, in word order.
    pub fn tokens(&self, d: usize) -> Vec<usize> {
        self.docs[d]
            .iter()
            .flat_map(|&(w, c)| std::iter::repeat_n(w as usize, c as usize))
            .collect()
    }

    /// Serialised form; `parse_corpus` of this string gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{}\n{}\n{}", self.docs.len(), self.vocab_size, self.nnz()).unwrap();
        for (d, doc) in self.docs.iter().enumerate() {
            for &(w, c) in doc {
                writeln!(s, "{} {} {}", d + 1, w + 1, c).unwrap();
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Declared documents with no triples; they are dropped.
    pub skipped_empty: usize,
}

fn parse_field(line: usize, field: Option<&str>, what: &str) -> Result<u64> {
    let field = field.ok_or_else(|| Error::Parse { line, msg: format!("missing {what}") })?;
    field
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("{what} '{field}' is not a non-negative integer") })
}

pub fn parse_corpus(text: &str) -> Result<(Corpus, LoadReport)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut header = [0u64; 3];
    for (slot, name) in header.iter_mut().zip(["document count", "vocabulary size", "non-zero count"]) {
        match lines.next() {
            Some((n, l)) => *slot = parse_field(n, Some(l), name)?,
            None if name == "document count" => {
                return Ok((Corpus { docs: Vec::new(), vocab_size: 0 }, LoadReport::default()));
            }
            None => return Err(Error::Parse { line: 0, msg: format!("truncated header: no {name}") }),
        }
    }
    let [d_count, w_count, nnz] = header;
    let mut docs: Vec<BTreeMap<u32, u32>> = vec![BTreeMap::new(); d_count as usize];
    let mut seen = 0u64;
    for (n, l) in lines {
        let mut f = l.split_whitespace();
        let d = parse_field(n, f.next(), "docID")?;
        let w = parse_field(n, f.next(), "wordID")?;
        let c = parse_field(n, f.next(), "count")?;
        if f.next().is_some() {
            return Err(Error::Parse { line: n, msg: "expected three fields".into() });
        }
        if d == 0 || d > d_count {
            return Err(Error::Validation(format!("line {n}: docID {d} outside 1..={d_count}")));
        }
        if w == 0 || w > w_count {
            return Err(Error::Validation(format!("line {n}: wordID {w} outside 1..={w_count}")));
        }
        if c == 0 || c > u32::MAX as u64 {
            return Err(Error::Validation(format!("line {n}: count {c} out of range")));
        }
        if docs[d as usize - 1].insert(w as u32 - 1, c as u32).is_some() {
            return Err(Error::Validation(format!("line {n}: word {w} repeated in document {d}")));
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::Validation(format!("header declares {nnz} triples, found {seen}")));
    }
    let skipped_empty = docs.iter().filter(|d| d.is_empty()).count();
    let docs = docs.into_iter().filter(|d| !d.is_empty()).map(|d| d.into_iter().collect()).collect();
    Ok((Corpus::new(docs, w_count as usize)?, LoadReport { skipped_empty }))
}

pub fn load_vocab(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(|l| l.trim().to_string()).collect())
}

/// Loads a corpus and optionally its vocabulary, whose length must equal W.
pub fn load_corpus(path: &Path, vocab_path: Option<&Path>) -> Result<(Corpus, Option<Vec<String>>, LoadReport)> {
    let (corpus, report) = parse_corpus(&std::fs::read_to_string(path)?)?;
    let vocab = match vocab_path {
        Some(p) => {
            let v = load_vocab(p)?;
            if v.len() != corpus.vocab_size() {
                return Err(Error::Validation(format!(
                    "vocabulary has {} entries, corpus declares W = {}",
                    v.len(),
                    corpus.vocab_size()
                )));
            }
            Some(v)
        }
        None => None,
    };
    Ok((corpus, vocab, report))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus.to_text())?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DocLength {
    Fixed(usize),
    /// 1 + Poisson(mean - 1): mean `mean`, never empty.
    Poisson(f64),
}

/// A corpus drawn from the LDA generative model, with the truth kept.
#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// K×W topic-word probabilities, row-major.
    pub topics: Vec<f64>,
    /// D×K document-topic weights, row-major.
    pub doc_topics: Vec<f64>,
    /// Per document, the (word, topic) of every token in generation order.
    pub assignments: Vec<Vec<(usize, usize)>>,
}

fn sample_dirichlet(stream: &mut RngStream, len: usize, conc: f64) -> Result<Vec<f64>> {
    let g = (0..len).map(|_| sample_gamma(stream, conc, 1.0)).collect::<Result<Vec<_>>>()?;
    let total: f64 = g.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("Dirichlet draw underflowed".into()));
    }
    Ok(g.into_iter().map(|x| x / total).collect())
}

pub fn generate_synthetic_corpus(
    stream: &mut RngStream,
    k: usize,
    w: usize,
    d: usize,
    length: DocLength,
    alpha: f64,
    beta: f64,
) -> Result<SyntheticCorpus> {
    if k == 0 || w == 0 {
        return Err(domain("need at least one topic and one word"));
    }
    match length {
        DocLength::Fixed(0) => return Err(domain("documents need at least one token")),
        DocLength::Poisson(m) if !(m >= 1.0) => return Err(domain("mean document length must be >= 1")),
        _ => {}
    }
    let mut topics = Vec::with_capacity(k * w);
    for _ in 0..k {
        topics.extend(sample_dirichlet(stream, w, beta)?);
    }
    let word_dists: Vec<WeightedIndex<f64>> = topics
        .chunks(w)
        .map(|row| WeightedIndex::new(row).map_err(|e| Error::Degenerate(e.to_string())))
        .collect::<Result<_>>()?;
    let mut doc_topics = Vec::with_capacity(d * k);
    let mut assignments = Vec::with_capacity(d);
    let mut token_docs = Vec::with_capacity(d);
    for _ in 0..d {
        let eta = sample_dirichlet(stream, k, alpha)?;
        let topic_dist = WeightedIndex::new(&eta).map_err(|e| Error::Degenerate(e.to_string()))?;
        let len = match length {
            DocLength::Fixed(n) => n,
            DocLength::Poisson(m) => 1 + sample_poisson(stream, m - 1.0)? as usize,
        };
        let mut doc = Vec::with_capacity(len);
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let z = topic_dist.sample(stream);
            let word = word_dists[z].sample(stream);
            doc.push((word, z));
            tokens.push(word);
        }
        doc_topics.extend(eta);
        assignments.push(doc);
        token_docs.push(tokens);
    }
    Ok(SyntheticCorpus { corpus: Corpus::from_tokens(&token_docs, w)?, topics, doc_topics, assignments })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub holdout_docs: usize,
    /// Share of each held-out document's tokens kept for estimating its topic weights.
    pub train_fraction: f64,
    pub seed: u64,
}

/// A held-out document split into the tokens that estimate its topic
/// weights and the tokens it is scored on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeldoutDoc {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Corpus,
    pub heldout: Vec<HeldoutDoc>,
    /// Held-out documents too short to give both sides a token; all their tokens are on the train side.
    pub too_short: usize,
}

const SPLIT_STREAM: u64 = 0x0053_504c_4954;

pub fn split_holdout(corpus: &Corpus, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(domain(format!("train fraction must be in (0, 1), got {}", spec.train_fraction)));
    }
    if spec.holdout_docs >= corpus.doc_count() {
        return Err(domain(format!(
            "cannot hold out {} of {} documents",
            spec.holdout_docs,
            corpus.doc_count()
        )));
    }
    let mut stream = RngStream::new(spec.seed, SPLIT_STREAM);
    let held = sample_without_replacement(&mut stream, corpus.doc_count(), spec.holdout_docs)?;
    let mut is_held = vec![false; corpus.doc_count()];
    held.iter().for_each(|&d| is_held[d] = true);
    let train_docs = corpus
        .docs()
        .iter()
        .zip(&is_held)
        .filter(|(_, &h)| !h)
        .map(|(doc, _)| doc.clone())
        .collect();
    let mut too_short = 0;
    let heldout = held
        .iter()
        .map(|&d| {
            let mut tokens = corpus.tokens(d);
            tokens.shuffle(&mut stream);
            let n_test = ((1.0 - spec.train_fraction) * tokens.len() as f64).round() as usize;
            if n_test == 0 || n_test == tokens.len() {
                too_short += 1;
                return HeldoutDoc { train: tokens, test: Vec::new() };
            }
            let test = tokens.split_off(tokens.len() - n_test);
            HeldoutDoc { train: tokens, test }
        })
        .collect();
    Ok(Split { train: Corpus::new(train_docs, corpus.vocab_size())?, heldout, too_short })
}
