use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use cvscir::corpus::{generate_synthetic_corpus, load_corpus, split_holdout, DocLength, HeldoutDoc, SplitSpec};
use cvscir::estimators::{CategoricalCounts, LabelledData};
use cvscir::lda::{corpus_docs, perplexity, train_lda, EvalConfig, LdaConfig, LdaDoc, LdaRun};
use cvscir::oracle::{
    baker_variance, corollary1_moments, corollary_a2_moments, exact_cir_moments, hypergeo_variance,
    unconditional_moments, ExpectationConfig, ExpectationMode, MinibatchLaw, MomentReport, Parametrization, StepLaw,
};
use cvscir::rng::{sample_gamma, RngStream};
use cvscir::samplers::{
    run_chain, to_simplex, ChainTrace, Fallback, FixedDataSource, GammaChainState, Kernel, KernelKind,
    StepsizeSchedule,
};
use cvscir::stats::{five_number, mean, median, FiveNumber};

use crate::config::Config;
use crate::svg::{self, Series};
use crate::CliError;

/// Shortest round-trip text, in exponent form for very small or large magnitudes.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn write(out: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::write(out.join(name), text)?;
    Ok(())
}

fn kernel_stream_id(kind: KernelKind) -> u64 {
    1 + KernelKind::ALL.iter().position(|&k| k == kind).unwrap() as u64
}

fn fallback_slot(f: Fallback) -> usize {
    match f {
        Fallback::None => 0,
        Fallback::Alternative => 1,
        Fallback::Simple => 2,
        Fallback::Disabled => 3,
    }
}

pub fn synthetic(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let totals: Vec<usize> = cfg.list("counts")?;
    if totals.is_empty() {
        return Err(CliError::Config("counts is empty".into()));
    }
    let k = totals.len();
    let alpha: f64 = cfg.get("alpha")?;
    let n: usize = cfg.get("n")?;
    let h: f64 = cfg.get("h")?;
    let burn_in: u64 = cfg.get("burn_in")?;
    let iterations: u64 = cfg.get("iterations")?;
    let thin: u64 = cfg.get("thin")?;
    let panels: usize = cfg.get("panels")?;
    let write_traces: bool = cfg.get("traces")?;
    let seed: u64 = cfg.get("seed")?;
    let kinds = cfg.kernels()?;
    let fallback = cfg.fallback()?;

    let data = LabelledData::from_totals(&totals);
    let counts = CategoricalCounts::from_data(&data, vec![alpha; k])?;
    let schedule = StepsizeSchedule::constant(h);

    // Exact posterior: normalised independent Gamma(a_k, 1) draws.
    let post = counts.posterior();
    let mut s = RngStream::new(seed, 0);
    let mut exact_draws: Vec<Vec<f64>> = vec![Vec::new(); k];
    for _ in 0..(iterations / thin.max(1)).max(1) {
        let g = post.iter().map(|&a| sample_gamma(&mut s, a, 1.0)).collect::<cvscir::Result<Vec<_>>>()?;
        for (col, w) in exact_draws.iter_mut().zip(to_simplex(&g)?) {
            col.push(w);
        }
    }

    let traces: Vec<ChainTrace> = kinds
        .par_iter()
        .map(|&kind| {
            let mut source = FixedDataSource::new(&data, &counts, n)?;
            let mut stream = RngStream::new(seed, kernel_stream_id(kind));
            let init = GammaChainState::new(vec![1.0; k], kind)?;
            run_chain(&mut stream, init, Kernel { kind, fallback }, &schedule, &mut source, iterations, burn_in, thin)
        })
        .collect::<cvscir::Result<_>>()?;
    if traces.iter().any(ChainTrace::is_empty) {
        return Err(CliError::Config("no iterations kept; raise iterations or lower thin".into()));
    }

    let mut columns: Vec<(String, Vec<Vec<f64>>)> = vec![("posterior".into(), exact_draws)];
    for (kind, trace) in kinds.iter().zip(&traces) {
        columns.push((kind.name().into(), (0..k).map(|j| trace.omega_column(j)).collect()));
    }

    let mut quart = String::from("sampler,component,min,q1,median,q3,max,mean\n");
    let mut report = String::from("sampler,component,median,posterior_median,abs_median_error\n");
    let post_medians: Vec<f64> = columns[0].1.iter().map(|c| median(c)).collect();
    for (name, cols) in &columns {
        for (j, c) in cols.iter().enumerate() {
            let f = five_number(c);
            let cells = [f.min, f.q1, f.median, f.q3, f.max, mean(c)].map(num).join(",");
            let _ = writeln!(quart, "{name},{},{cells}", j + 1);
            let err = (f.median - post_medians[j]).abs();
            let _ = writeln!(report, "{name},{},{},{},{}", j + 1, num(f.median), num(post_medians[j]), num(err));
        }
    }
    write(out, "quartiles.csv", &quart)?;
    write(out, "report.csv", &report)?;

    let mut fb = String::from("sampler,none,alt,simple,disabled\n");
    for (kind, trace) in kinds.iter().zip(&traces) {
        let mut tally = [0u64; 4];
        for r in &trace.records {
            r.fallback.iter().for_each(|&f| tally[fallback_slot(f)] += 1);
        }
        let _ = writeln!(fb, "{},{},{},{},{}", kind.name(), tally[0], tally[1], tally[2], tally[3]);
    }
    write(out, "fallbacks.csv", &fb)?;

    let box_panels: Vec<(String, Vec<(String, FiveNumber)>)> = (0..panels.min(k))
        .map(|j| {
            let boxes = columns.iter().map(|(name, cols)| (name.clone(), five_number(&cols[j]))).collect();
            (format!("component {}", j + 1), boxes)
        })
        .collect();
    write(out, "boxplot.svg", &svg::boxplot(&box_panels))?;

    if write_traces {
        std::fs::create_dir_all(out.join("traces"))?;
        for (kind, trace) in kinds.iter().zip(&traces) {
            let file = std::fs::File::create(out.join("traces").join(format!("{}.csv", kind.name())))?;
            trace.write_csv(std::io::BufWriter::new(file))?;
        }
    }
    println!("synthetic: {} samplers, {} kept draws each, outputs in {}", kinds.len(), traces[0].records.len(), out.display());
    Ok(())
}

fn law(cfg: &Config) -> Result<MinibatchLaw, CliError> {
    Ok(MinibatchLaw::from_fraction(cfg.get("population")?, cfg.get("p")?, cfg.get("n")?, cfg.get("alpha")?)?)
}

fn expectation(cfg: &Config) -> Result<ExpectationConfig, CliError> {
    let mode = match cfg.raw("expectation") {
        "auto" => ExpectationMode::Auto,
        "exact" => ExpectationMode::Exact,
        "mc" => ExpectationMode::MonteCarlo,
        other => return Err(CliError::Config(format!("expectation must be auto, exact or mc, got '{other}'"))),
    };
    Ok(ExpectationConfig { mode, mc_draws: cfg.get("mc_draws")?, seed: cfg.get("seed")? })
}

fn m_grid(cfg: &Config) -> Result<Vec<u32>, CliError> {
    let max_m: u32 = cfg.get("max_m")?;
    if max_m == 0 {
        return Err(CliError::Config("max_m must be positive".into()));
    }
    Ok((1..=max_m).collect())
}

pub fn variance_compare(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let law = law(cfg)?;
    let ecfg = expectation(cfg)?;
    let (theta0, h): (f64, f64) = (cfg.get("theta0")?, cfg.get("h")?);
    let grid = m_grid(cfg)?;
    let a = law.a();
    let var_a_hat = hypergeo_variance(&law);

    let mut rows: Vec<[f64; 4]> = Vec::with_capacity(grid.len());
    let mut last_main: Option<MomentReport> = None;
    for &m in &grid {
        let exact = exact_cir_moments(theta0, a, h, m).1;
        let alt = corollary_a2_moments(&law, theta0, h, m, &ecfg)?.variance;
        let main = corollary1_moments(&law, theta0, h, m, &ecfg)?;
        let baker = baker_variance(var_a_hat, a, theta0, h, m);
        rows.push([exact, alt, main.variance, baker]);
        last_main = Some(main);
    }
    let mut csv = String::from("M,exact,cv_alt,cv_main,baker,stationary\n");
    for (&m, r) in grid.iter().zip(&rows) {
        let _ = writeln!(csv, "{m},{},{},{},{},{a}", r[0], r[1], r[2], r[3]);
    }
    write(out, "variance.csv", &csv)?;

    let names = ["exact CIR", "CV-SCIR alt", "CV-SCIR main", "SCIR"];
    let xs: Vec<f64> = grid.iter().map(|&m| m as f64).collect();
    let series: Vec<Series> = names
        .iter()
        .enumerate()
        .map(|(j, name)| Series { name: name.to_string(), x: xs.clone(), y: rows.iter().map(|r| r[j]).collect(), band: None })
        .collect();
    write(out, "variance.svg", &svg::line_plot("Var[θ_M]", "M", &series, Some((a, "posterior variance a"))))?;

    let pairs = [("exact_le_cv_alt", 0, 1), ("cv_alt_le_cv_main", 1, 2), ("cv_main_le_baker", 2, 3)];
    let last = last_main.expect("grid is non-empty");
    let mut report = String::from("quantity,value\n");
    let _ = writeln!(report, "a,{a}\nvar_a_hat,{var_a_hat}\nsigma2_a,{}", last.sigma2_a);
    let _ = writeln!(report, "nonpositive_rate_mass,{}\nexcluded_draws,{}", num(last.nonpositive_rate_mass), last.excluded_draws);
    let _ = writeln!(report, "exact_expectations,{}", last.exact_expectations);
    for (name, i, j) in pairs {
        let bad: Vec<String> = grid.iter().zip(&rows).filter(|(_, r)| r[i] > r[j]).map(|(m, _)| m.to_string()).collect();
        let _ = writeln!(report, "{name}_violations,{}", bad.join(";"));
        if !bad.is_empty() {
            println!("variance-compare: {name} fails at M = {}", bad.join(", "));
        }
    }
    write(out, "report.csv", &report)?;
    println!("variance-compare: {} grid points, outputs in {}", grid.len(), out.display());
    Ok(())
}

type Column = (&'static str, fn(&MomentReport) -> f64);

pub fn moments(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let law = law(cfg)?;
    let ecfg = expectation(cfg)?;
    let (theta0, h): (f64, f64) = (cfg.get("theta0")?, cfg.get("h")?);
    let grid = m_grid(cfg)?;
    let params = match cfg.raw("param") {
        "main" => vec![Parametrization::Main],
        "alt" => vec![Parametrization::Alternative],
        "both" => vec![Parametrization::Main, Parametrization::Alternative],
        other => return Err(CliError::Config(format!("param must be main, alt or both, got '{other}'"))),
    };

    let mut reports: Vec<(Parametrization, Vec<MomentReport>, Vec<f64>)> = Vec::new();
    for &p in &params {
        let mut rs = Vec::with_capacity(grid.len());
        let mut total = Vec::with_capacity(grid.len());
        for &m in &grid {
            rs.push(match p {
                Parametrization::Main => corollary1_moments(&law, theta0, h, m, &ecfg)?,
                Parametrization::Alternative => corollary_a2_moments(&law, theta0, h, m, &ecfg)?,
            });
            total.push(unconditional_moments(&law, StepLaw::Control(p), theta0, h, m, &ecfg)?.1);
        }
        reports.push((p, rs, total));
    }

    let mut csv = String::from("quantity,M,value\n");
    let shared: [Column; 5] = [
        ("exact_mean", |r| r.exact_mean),
        ("exact_variance", |r| r.exact_variance),
        ("baker_variance", |r| r.baker_variance),
        ("approx_mean", |r| r.approx_mean),
        ("approx_variance", |r| r.approx_variance),
    ];
    for (name, f) in shared {
        for r in &reports[0].1 {
            let _ = writeln!(csv, "{name},{},{}", r.m, f(r));
        }
    }
    let per_param: [Column; 5] = [
        ("mean", |r| r.mean),
        ("variance", |r| r.variance),
        ("c1", |r| r.c1),
        ("c2", |r| r.c2),
        ("c3", |r| r.c3),
    ];
    for (p, rs, total) in &reports {
        for (name, f) in per_param {
            for r in rs {
                let _ = writeln!(csv, "{}_{name},{},{}", p.name(), r.m, f(r));
            }
        }
        for (r, t) in rs.iter().zip(total) {
            let _ = writeln!(csv, "{}_total_variance,{},{t}", p.name(), r.m);
        }
    }
    write(out, "moments.csv", &csv)?;
    println!("moments: {} grid points, outputs in {}", grid.len(), out.display());
    Ok(())
}

struct LdaData {
    docs: Vec<LdaDoc>,
    vocab_size: usize,
    heldout: Vec<HeldoutDoc>,
}

fn lda_data(cfg: &Config) -> Result<LdaData, CliError> {
    let corpus_seed: u64 = cfg.get("corpus_seed")?;
    let path = cfg.raw("corpus");
    let corpus = if path.is_empty() {
        let mut s = RngStream::new(corpus_seed, 0);
        generate_synthetic_corpus(
            &mut s,
            cfg.get("synth_topics")?,
            cfg.get("synth_vocab")?,
            cfg.get("synth_docs")?,
            DocLength::Poisson(cfg.get("synth_length")?),
            cfg.get("synth_alpha")?,
            cfg.get("synth_beta")?,
        )?
        .corpus
    } else {
        let vocab = cfg.raw("vocab");
        let vocab = (!vocab.is_empty()).then(|| Path::new(vocab));
        let (corpus, _, report) = load_corpus(Path::new(path), vocab).map_err(|e| match e {
            cvscir::Error::Io(m) => cvscir::Error::Io(format!("{path}: {m}")),
            other => other,
        })?;
        if report.skipped_empty > 0 {
            eprintln!("cvscir: skipped {} empty documents in {path}", report.skipped_empty);
        }
        corpus
    };
    let spec = SplitSpec { holdout_docs: cfg.get("holdout_docs")?, train_fraction: cfg.get("train_fraction")?, seed: corpus_seed };
    let split = split_holdout(&corpus, &spec)?;
    if split.too_short > 0 {
        eprintln!("cvscir: {} held-out documents too short to split", split.too_short);
    }
    Ok(LdaData { docs: corpus_docs(&split.train), vocab_size: corpus.vocab_size(), heldout: split.heldout })
}

fn lda_config(cfg: &Config) -> Result<LdaConfig, CliError> {
    let cv_min_mode = match cfg.raw("cv_min_mode") {
        "auto" => None,
        _ => Some(cfg.get("cv_min_mode")?),
    };
    let lda = LdaConfig {
        topics: cfg.get("topics")?,
        alpha: cfg.get("lda_alpha")?,
        beta: cfg.get("beta")?,
        gibbs_samples: cfg.get("gibbs_samples")?,
        minibatch_docs: cfg.get("minibatch_docs")?,
        refresh_every: cfg.get("refresh_every")?,
        refresh_docs: cfg.get("refresh_docs")?,
        schedule: StepsizeSchedule { h0: cfg.get("h0")?, tau: cfg.get("tau")?, kappa: cfg.get("step_kappa")? },
        fallback: cfg.fallback()?,
        cv_min_mode,
    };
    lda.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(lda)
}

fn seeds(cfg: &Config) -> Result<Vec<u64>, CliError> {
    let base: u64 = cfg.get("seed")?;
    let count: u64 = cfg.get("seeds")?;
    if count == 0 {
        return Err(CliError::Config("seeds must be positive".into()));
    }
    Ok((base..base + count).collect())
}

fn omega_csv(omega: &[f64], w: usize) -> String {
    let mut s = String::new();
    for row in omega.chunks(w) {
        let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}

pub fn lda_train(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let kinds = cfg.kernels()?;
    if kinds.contains(&KernelKind::ExactCir) {
        return Err(CliError::Config("the exact kernel needs full-data counts and cannot train LDA".into()));
    }
    let lda = lda_config(cfg)?;
    let data = lda_data(cfg)?;
    let eval = EvalConfig { every: cfg.get("eval_every")?, gibbs_sweeps: cfg.get("eval_sweeps")?, burn_in: cfg.get("eval_burn_in")? };
    let iterations: u64 = cfg.get("iterations")?;
    let seeds = seeds(cfg)?;

    let mut report = String::from("kernel,seed,final_perplexity,fallback_none,fallback_alt,fallback_simple,fallback_disabled,dropped_tokens\n");
    let mut series = Vec::new();
    for &kind in &kinds {
        let kernel = Kernel { kind, fallback: lda.fallback };
        let runs: Vec<LdaRun> = seeds
            .par_iter()
            .map(|&s| train_lda(s, &data.docs, data.vocab_size, &data.heldout, &lda, kernel, iterations, &eval))
            .collect::<cvscir::Result<_>>()?;
        let mut csv = String::from("iter,docs_seen,perplexity,seed\n");
        for (run, &s) in runs.iter().zip(&seeds) {
            for r in &run.records {
                let _ = writeln!(csv, "{},{},{},{}", r.iter, r.docs_seen, r.perplexity, r.seed);
            }
            let fin = run.records.last().map_or(f64::NAN, |r| r.perplexity);
            let f = run.fallbacks;
            let _ = writeln!(report, "{},{s},{fin},{},{},{},{},{}", kind.name(), f[0], f[1], f[2], f[3], run.dropped_tokens);
            write(out, &format!("topics_{}_seed{s}.csv", kind.name()), &omega_csv(&run.state.omega()?, data.vocab_size))?;
        }
        write(out, &format!("perplexity_{}.csv", kind.name()), &csv)?;
        if let Some(first) = runs.first().filter(|r| !r.records.is_empty()) {
            let x: Vec<f64> = first.records.iter().map(|r| r.iter as f64).collect();
            let at = |i: usize| runs.iter().map(|r| r.records[i].perplexity).collect::<Vec<_>>();
            let y = (0..x.len()).map(|i| mean(&at(i))).collect();
            let lo = (0..x.len()).map(|i| at(i).into_iter().fold(f64::INFINITY, f64::min)).collect();
            let hi = (0..x.len()).map(|i| at(i).into_iter().fold(f64::NEG_INFINITY, f64::max)).collect();
            series.push(Series { name: kind.name().to_string(), x, y, band: Some((lo, hi)) });
        }
        println!("lda-train: {} done over {} seeds", kind.name(), seeds.len());
    }
    write(out, "report.csv", &report)?;
    write(out, "perplexity.svg", &svg::line_plot("held-out perplexity (mean, min-max band)", "iteration", &series, None))?;
    Ok(())
}

fn read_omega(path: &Path, w: usize) -> Result<(Vec<f64>, usize), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| cvscir::Error::Io(format!("{}: {e}", path.display())))?;
    let mut omega = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| cvscir::Error::Parse { line: i + 1, msg: format!("{}: {e}", path.display()) })?;
        if row.len() != w {
            return Err(cvscir::Error::Validation(format!("{}: row {} has {} columns, vocabulary has {w}", path.display(), i + 1, row.len())).into());
        }
        omega.extend(row);
        rows += 1;
    }
    if rows == 0 {
        return Err(cvscir::Error::Validation(format!("{} holds no topics", path.display())).into());
    }
    Ok((omega, rows))
}

pub fn lda_eval(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let files: Vec<String> = cfg.list("topics_file")?;
    if files.is_empty() {
        return Err(CliError::Config("topics_file is required".into()));
    }
    let data = lda_data(cfg)?;
    let alpha: f64 = cfg.get("lda_alpha")?;
    let sweeps: usize = cfg.get("eval_sweeps")?;
    let seed: u64 = cfg.get("seed")?;
    let mut samples = Vec::new();
    let mut k = 0;
    for f in &files {
        let (omega, rows) = read_omega(Path::new(f), data.vocab_size)?;
        if k != 0 && rows != k {
            return Err(cvscir::Error::Validation(format!("{f} has {rows} topics, expected {k}")).into());
        }
        k = rows;
        samples.push(omega);
    }
    let est = cvscir::lda::PerplexityEstimator::new(&data.heldout, data.vocab_size, k, alpha, sweeps)?;
    let stream = RngStream::new(seed, 3);
    let mut csv = String::from("source,perplexity,test_tokens,dropped_tokens\n");
    for (f, omega) in files.iter().zip(&samples) {
        let p = perplexity(&stream, std::slice::from_ref(omega), &data.heldout, k, data.vocab_size, alpha, sweeps)?;
        let _ = writeln!(csv, "{f},{p},{},{}", est.test_tokens(), est.dropped_tokens());
    }
    if samples.len() > 1 {
        let p = perplexity(&stream, &samples, &data.heldout, k, data.vocab_size, alpha, sweeps)?;
        let _ = writeln!(csv, "pooled,{p},{},{}", est.test_tokens(), est.dropped_tokens());
    }
    write(out, "eval.csv", &csv)?;
    println!("lda-eval: {} topic files, outputs in {}", files.len(), out.display());
    Ok(())
}
