//! Flat `key = value` run configuration.
//!
//! Each subcommand owns a table of keys with defaults. Values come from the
//! defaults, then the `--config` file, then command-line flags and trailing
//! `KEY=VALUE` pairs, in that order. The resolved table is written next to the
//! outputs and can be fed back with `--config`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use cvscir::samplers::{FallbackPolicy, KernelKind};

use crate::CliError;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const COMMON: &[Key] = &[
    key("seed", "1", "base random seed"),
    key("threads", "0", "worker threads, 0 for one per core"),
];

const SYNTHETIC: &[Key] = &[
    key("kernel", "exact,scir,cv-main,cv-alt,sgrld", "samplers to run"),
    key("counts", "800,100,100,0,0,0,0,0,0,0", "per-category totals of the labelled data"),
    key("alpha", "0.1", "symmetric Dirichlet prior"),
    key("n", "10", "subsample size"),
    key("h", "0.5", "stepsize"),
    key("burn_in", "1000", "discarded iterations"),
    key("iterations", "1000", "kept iterations"),
    key("thin", "1", "keep every thin-th iteration"),
    key("fallback", "alt", "main-parametrization fallback for b̂ <= 0: alt or simple"),
    key("panels", "4", "components shown in the boxplot"),
    key("traces", "false", "write per-sampler trace CSVs"),
];

const LAW: &[Key] = &[
    key("theta0", "7.67", "initial state"),
    key("alpha", "0.1", "prior shape"),
    key("h", "0.1", "stepsize"),
    key("population", "1000", "data set size N"),
    key("p", "0.15", "fraction of data in the category"),
    key("n", "100", "subsample size"),
    key("max_m", "100", "largest step count"),
    key("expectation", "auto", "E[f(â)] evaluation: auto, exact or mc"),
    key("mc_draws", "1000", "Monte Carlo draws when not summing exactly"),
];

const MOMENTS: &[Key] = &[key("param", "both", "main, alt or both")];

const LDA: &[Key] = &[
    key("kernel", "scir,cv-alt,sgrld", "samplers to train"),
    key("corpus", "", "bag-of-words corpus file; empty for a synthetic corpus"),
    key("vocab", "", "vocabulary file, one word per line"),
    key("corpus_seed", "7", "seed of the synthetic corpus and the held-out split"),
    key("synth_topics", "5", "topics of the synthetic corpus"),
    key("synth_vocab", "200", "vocabulary size of the synthetic corpus"),
    key("synth_docs", "2200", "documents of the synthetic corpus, held-out ones included"),
    key("synth_length", "50", "mean document length (Poisson)"),
    key("synth_alpha", "0.5", "document-topic prior of the generator"),
    key("synth_beta", "0.1", "topic-word prior of the generator"),
    key("holdout_docs", "200", "held-out documents"),
    key("train_fraction", "0.9", "share of each held-out document used to fit its topic weights"),
    key("topics", "5", "K"),
    key("lda_alpha", "1.1", "document-topic prior"),
    key("beta", "0.1", "topic-word prior"),
    key("gibbs_samples", "200", "Gibbs sweeps per document"),
    key("minibatch_docs", "50", "documents per iteration"),
    key("refresh_every", "5", "iterations between control-variate refreshes"),
    key("refresh_docs", "1000", "documents in a control-variate refresh"),
    key("h0", "1", "stepsize scale"),
    key("tau", "1000", "stepsize offset"),
    key("step_kappa", "3.32", "stepsize decay exponent"),
    key("fallback", "alt", "main-parametrization fallback for b̂ <= 0: alt or simple"),
    key("cv_min_mode", "auto", "smallest anchor mode using the control variate; auto is |D|/|D_t|"),
    key("iterations", "200", "training iterations"),
    key("seeds", "5", "runs per sampler, seeds seed..seed+seeds"),
    key("eval_every", "5", "iterations between perplexity evaluations"),
    key("eval_sweeps", "50", "Gibbs sweeps per held-out document"),
    key("eval_burn_in", "100", "evaluations after this iteration are pooled"),
];

const LDA_EVAL: &[Key] = &[key("topics_file", "", "comma-separated topic-word CSV files, pooled as ω samples")];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Synthetic,
    VarianceCompare,
    Moments,
    LdaTrain,
    LdaEval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synthetic => "synthetic",
            Command::VarianceCompare => "variance-compare",
            Command::Moments => "moments",
            Command::LdaTrain => "lda-train",
            Command::LdaEval => "lda-eval",
        }
    }

    fn tables(self) -> Vec<&'static [Key]> {
        match self {
            Command::Synthetic => vec![COMMON, SYNTHETIC],
            Command::VarianceCompare => vec![COMMON, LAW],
            Command::Moments => vec![COMMON, LAW, MOMENTS],
            Command::LdaTrain => vec![COMMON, LDA],
            Command::LdaEval => vec![COMMON, LDA, LDA_EVAL],
        }
    }
}

pub struct Config {
    command: Command,
    entries: Vec<(&'static Key, String)>,
}

fn split_pair(text: &str) -> Option<(&str, &str)> {
    let (k, v) = text.split_once('=')?;
    Some((k.trim(), v.trim()))
}

impl Config {
    pub fn defaults(command: Command) -> Self {
        let entries = command.tables().into_iter().flatten().map(|k| (k, k.default.to_string())).collect();
        Config { command, entries }
    }

    pub fn set(&mut self, name: &str, value: &str) -> Result<(), CliError> {
        match self.entries.iter_mut().find(|(k, _)| k.name == name) {
            Some((_, v)) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown key '{name}' for {}", self.command.name()))),
        }
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line)
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected key = value", i + 1)))?;
            self.set(k, v).map_err(|e| CliError::Config(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn apply_override(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = split_pair(pair).ok_or_else(|| CliError::Config(format!("expected KEY=VALUE, got '{pair}'")))?;
        self.set(k, v)
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(k, _)| k.name == name)
    }

    pub fn raw(&self, name: &str) -> &str {
        self.entries
            .iter()
            .find(|(k, _)| k.name == name)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("key {name} not declared for {}", self.command.name()))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError> {
        let raw = self.raw(name);
        raw.parse().map_err(|_| CliError::Config(format!("{name} = '{raw}' is not a valid value")))
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>, CliError> {
        self.raw(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| CliError::Config(format!("{name}: '{s}' is not a valid value"))))
            .collect()
    }

    pub fn kernels(&self) -> Result<Vec<KernelKind>, CliError> {
        let raw = self.raw("kernel");
        let kinds = raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| KernelKind::parse(s).ok_or_else(|| CliError::Config(format!("unknown kernel '{s}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        if kinds.is_empty() {
            return Err(CliError::Config("no kernel selected".into()));
        }
        Ok(kinds)
    }

    pub fn fallback(&self) -> Result<FallbackPolicy, CliError> {
        match self.raw("fallback") {
            "alt" => Ok(FallbackPolicy::Alternative),
            "simple" => Ok(FallbackPolicy::Simple),
            other => Err(CliError::Config(format!("fallback must be alt or simple, got '{other}'"))),
        }
    }

    /// The resolved table, one `key = value` per line with its help as a comment.
    pub fn render(&self) -> String {
        let mut out = format!("# cvscir {}\n", self.command.name());
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{} = {}  # {}", k.name, v, k.help);
        }
        out
    }
}
