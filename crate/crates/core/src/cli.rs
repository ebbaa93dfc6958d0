//! Command-line surface: `simulate`, `fit`, `evaluate` and `template`.
//!
//! `STICKYDIFF_SEED` overrides every seed given on the command line or in a
//! config. `STICKYDIFF_THREADS` caps how many replicates or datasets are
//! processed at once; each chain itself is single-threaded.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bh_adjust, probe_tests};
use crate::data::logit_transform;
use crate::detection::PosteriorSummary;
use crate::error::{Error, Result};
use crate::evaluation::{achieved_fdr, auc, auc_partial, roc_points};
use crate::evidence::{bf_lower_bound, BoundEstimate, Direction};
use crate::io::{self, MethodScores};
use crate::math::mix_seed;
use crate::mcmc::{run_chain_partial, Diagnostics, McmcConfig};
use crate::simgen::{generate_dataset_seeded, SimConfig};

pub const SEED_ENV: &str = "STICKYDIFF_SEED";
pub const THREADS_ENV: &str = "STICKYDIFF_THREADS";
/// Seed used when neither the environment, the command line nor the config
/// provides one.
pub const DEFAULT_SEED: u64 = 1;
pub const REPORT_SCHEMA: &str = "stickydiff.report/1";

#[derive(Debug, Parser)]
#[command(name = "stickydiff", version, about = "Differential methylation with a sticky Pitman-Yor mixture")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic datasets with ground truth.
    Simulate {
        /// Simulation config (JSON).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of replicates; more than one writes `rep_001`, `rep_002`, ...
        #[arg(long, default_value_t = 1)]
        replicates: usize,
    },
    /// Run the sampler on one or more datasets and call differential probes.
    Fit {
        /// `dataset.tsv` files or directories containing one. Coordinates are
        /// read from the sibling `positions.tsv`.
        #[arg(long, num_args = 1.., required = true)]
        dataset: Vec<PathBuf>,
        /// Sampler config (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Nominal Bayesian FDR (defaults to the config value, 0.05).
        #[arg(long)]
        q0: Option<f64>,
    },
    /// Score fit results against ground truth, with frequentist baselines.
    Evaluate {
        /// Fit output directories, or scenario directories holding one
        /// subdirectory per replicate.
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// A `truth.tsv` file, or a simulation directory holding
        /// `<replicate>/truth.tsv`.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Level for baseline Benjamini-Hochberg calls.
        #[arg(long, default_value_t = 0.05)]
        q0: f64,
    },
    /// Print a default config.
    Template {
        #[arg(value_enum)]
        kind: TemplateKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TemplateKind {
    Sim,
    Mcmc,
}

/// Exit status for an error: 2 for bad input, 3 for runtime failures.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        2
    } else {
        3
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            replicates,
        } => cmd_simulate(&config, &out, seed, replicates),
        Command::Fit {
            dataset,
            config,
            out,
            seed,
            q0,
        } => cmd_fit(&dataset, config.as_deref(), &out, seed, q0),
        Command::Evaluate { results, truth, out, q0 } => cmd_evaluate(&results, &truth, &out, q0).map(|_| ()),
        Command::Template { kind } => {
            let text = match kind {
                TemplateKind::Sim => io::to_json_text(&SimConfig::default())?,
                TemplateKind::Mcmc => io::to_json_text(&McmcConfig::default())?,
            };
            print!("{text}");
            Ok(())
        }
    }
}

/// Seed precedence: environment, then command line, then config.
pub fn resolve_seed(cli: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        return v
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("{SEED_ENV}={v:?} is not an unsigned integer")));
    }
    Ok(cli.or(config).unwrap_or(DEFAULT_SEED))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Validation(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Validation(e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct SimRun {
    seed: u64,
    replicate: usize,
}

pub fn cmd_simulate(config: &Path, out: &Path, seed: Option<u64>, replicates: usize) -> Result<()> {
    let cfg: SimConfig = io::read_json(config)?;
    cfg.validate()?;
    if replicates == 0 {
        return Err(Error::Validation("replicates must be at least 1".into()));
    }
    let seed = resolve_seed(seed, cfg.seed)?;
    io::atomic_write(&out.join(io::CONFIG_ECHO_FILE), io::to_json_text(&cfg)?.as_bytes())?;
    let one = |r: usize| -> Result<()> {
        let (dir, s) = if replicates == 1 {
            (out.to_path_buf(), seed)
        } else {
            (out.join(format!("rep_{:03}", r + 1)), mix_seed(seed, r as u64))
        };
        // constraint violations here stem from the config (eta_0 against the gaps)
        let (ds, truth) = generate_dataset_seeded(&cfg, s).map_err(|e| match e {
            Error::Constraint(m) => Error::Validation(format!("{}: {m}", config.display())),
            e => e,
        })?;
        io::write_dataset(&dir, &ds)?;
        io::write_truth(&dir.join(io::TRUTH_FILE), &ds.probe_ids, &truth)?;
        io::write_json(&dir.join("run.json"), &SimRun { seed: s, replicate: r + 1 })?;
        log::info!("wrote {} ({} samples, {} probes)", dir.display(), ds.n, ds.p);
        Ok(())
    };
    thread_pool()?.install(|| (0..replicates).into_par_iter().try_for_each(one))
}

/// Model-order evidence written to `evidence.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceReport {
    pub order1_vs_order0: BoundEstimate,
    pub order0_vs_order1: BoundEstimate,
    /// `"order1"` when the bound favours `eta > 0`, otherwise `"order0"`.
    pub favoured: String,
}

/// Contents of `diagnostics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seed: u64,
    pub n_samples: usize,
    pub n_probes: usize,
    pub n_treatments: usize,
    pub stored_draws: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_star: Option<usize>,
    pub q0: f64,
    pub sampler: Diagnostics,
}

fn dataset_paths(input: &Path) -> (PathBuf, PathBuf) {
    let ds = if input.is_dir() {
        input.join(io::DATASET_FILE)
    } else {
        input.to_path_buf()
    };
    let dir = ds.parent().map(Path::to_path_buf).unwrap_or_default();
    (ds, dir.join(io::POSITIONS_FILE))
}

/// Fits one dataset and writes every output into `out`.
pub fn fit_dataset(dataset: &Path, positions: &Path, cfg: &McmcConfig, seed: u64, out: &Path) -> Result<FitReport> {
    let ds = io::read_dataset(dataset, positions)?;
    let data = logit_transform(&ds, cfg.clamp_eps)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (chain, failure) = run_chain_partial(&data, cfg, &mut rng);
    log::info!(
        "{}: {} sweeps in {:.1} s",
        dataset.display(),
        chain.diagnostics.iterations,
        chain.diagnostics.seconds
    );
    io::write_trace(&out.join(io::TRACE_FILE), &chain.trace)?;
    let mut report = FitReport {
        status: "completed".into(),
        error: None,
        seed,
        n_samples: ds.n,
        n_probes: ds.p,
        n_treatments: data.n_treatments,
        stored_draws: chain.trace.len(),
        b_star: None,
        q0: cfg.q0,
        sampler: chain.diagnostics,
    };
    if let Some(e) = failure {
        report.status = "aborted".into();
        report.error = Some(e.to_string());
        io::write_json(&out.join(io::DIAGNOSTICS_FILE), &report)?;
        return Err(e);
    }
    let summary = PosteriorSummary::from_accumulator(&chain.accumulator, cfg.q0)?;
    let theta_means = chain.accumulator.theta_means()?;
    io::write_posterior_summary(&out.join(io::SUMMARY_FILE), &ds, &summary, &theta_means)?;
    let log_odds = chain.log_odds();
    let forward = bf_lower_bound(&log_odds, Direction::Order1VsOrder0)?;
    let evidence = EvidenceReport {
        order1_vs_order0: forward,
        order0_vs_order1: bf_lower_bound(&log_odds, Direction::Order0VsOrder1)?,
        favoured: if forward.estimate > 0.0 { "order1" } else { "order0" }.into(),
    };
    io::write_json(&out.join(io::EVIDENCE_FILE), &evidence)?;
    report.b_star = Some(summary.b_star);
    io::write_json(&out.join(io::DIAGNOSTICS_FILE), &report)?;
    Ok(report)
}

pub fn cmd_fit(datasets: &[PathBuf], config: Option<&Path>, out: &Path, seed: Option<u64>, q0: Option<f64>) -> Result<()> {
    let mut cfg = match config {
        Some(path) => io::read_json::<McmcConfig>(path)?,
        None => McmcConfig::default(),
    };
    if let Some(q) = q0 {
        cfg.q0 = q;
    }
    cfg.validate()?;
    let seed = resolve_seed(seed, cfg.seed)?;
    if datasets.is_empty() {
        return Err(Error::Validation("no dataset given".into()));
    }
    let jobs: Vec<(PathBuf, PathBuf, PathBuf)> = if datasets.len() == 1 {
        let (d, p) = dataset_paths(&datasets[0]);
        vec![(d, p, out.to_path_buf())]
    } else {
        let mut seen = BTreeSet::new();
        datasets
            .iter()
            .map(|input| {
                let (d, p) = dataset_paths(input);
                let name = d
                    .parent()
                    .and_then(|x| x.file_name())
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| Error::Validation(format!("cannot name the output of {}", d.display())))?;
                if !seen.insert(name.clone()) {
                    return Err(Error::Validation(format!("two datasets live in directories named {name:?}")));
                }
                Ok((d, p, out.join(name)))
            })
            .collect::<Result<_>>()?
    };
    for (d, _, _) in &jobs {
        if !d.is_file() {
            return Err(Error::Validation(format!("dataset {} does not exist", d.display())));
        }
    }
    thread_pool()?.install(|| {
        jobs.par_iter()
            .try_for_each(|(d, p, o)| fit_dataset(d, p, &cfg, seed, o).map(|_| ()))
    })
}

/// Scores of every method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub auc: f64,
    pub auc20: f64,
    pub auc10: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_fdr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_called: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateReport {
    pub replicate: String,
    pub n_probes: usize,
    pub n_differential: usize,
    pub methods: BTreeMap<String, MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub n_replicates: usize,
    pub auc_mean: f64,
    pub auc20_mean: f64,
    pub auc10_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_fdr_mean: Option<f64>,
    /// Achieved FDR of every replicate, in replicate order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub achieved_fdr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub q0: f64,
    pub replicates: Vec<ReplicateReport>,
    pub aggregate: BTreeMap<String, MethodAggregate>,
}

fn has_results(dir: &Path) -> bool {
    dir.join(io::SUMMARY_FILE).is_file() || dir.join(io::SCORES_FILE).is_file()
}

/// Replicate result directories under the given paths, in argument order
/// and then by name.
fn discover_replicates(results: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for r in results {
        if !r.is_dir() {
            return Err(Error::Validation(format!("{} is not a directory", r.display())));
        }
        if has_results(r) {
            found.push(r.clone());
            continue;
        }
        let mut subs: Vec<PathBuf> = std::fs::read_dir(r)
            .map_err(|e| Error::io(r, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir() && has_results(p))
            .collect();
        if subs.is_empty() {
            return Err(Error::Validation(format!(
                "{} holds no {} or {}",
                r.display(),
                io::SUMMARY_FILE,
                io::SCORES_FILE
            )));
        }
        subs.sort();
        found.extend(subs);
    }
    Ok(found)
}

fn truth_for(truth: &Path, replicate: &str) -> Result<PathBuf> {
    if truth.is_file() {
        return Ok(truth.to_path_buf());
    }
    for candidate in [truth.join(replicate).join(io::TRUTH_FILE), truth.join(io::TRUTH_FILE)] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::Validation(format!("no truth for replicate {replicate} under {}", truth.display())))
}

/// Reorders `scores` to follow `ids`, or fails listing every probe that is
/// present on one side only.
fn align(mut scores: MethodScores, ids: &[String], origin: &Path) -> Result<MethodScores> {
    if scores.probe_ids == ids {
        return Ok(scores);
    }
    let index: HashMap<&str, usize> = scores.probe_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let want: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let mut offending: Vec<&str> = ids.iter().map(String::as_str).filter(|id| !index.contains_key(id)).collect();
    offending.extend(scores.probe_ids.iter().map(String::as_str).filter(|id| !want.contains(id)));
    if !offending.is_empty() || scores.probe_ids.len() != ids.len() {
        offending.sort_unstable();
        offending.dedup();
        return Err(Error::Validation(format!(
            "probe sets of {} and the truth differ; offending ids: {}",
            origin.display(),
            offending.join(", ")
        )));
    }
    let order: Vec<usize> = ids.iter().map(|id| index[id.as_str()]).collect();
    scores.scores = order.iter().map(|&k| scores.scores[k]).collect();
    if let Some(c) = &scores.called {
        scores.called = Some(order.iter().map(|&k| c[k]).collect());
    }
    scores.probe_ids = ids.to_vec();
    Ok(scores)
}

fn baseline_scores(truth_path: &Path, ids: &[String], q0: f64) -> Result<Vec<MethodScores>> {
    let Some((d, p)) = io::sibling_dataset(truth_path) else {
        log::warn!("no dataset next to {}; baselines skipped", truth_path.display());
        return Ok(Vec::new());
    };
    let ds = io::read_dataset(&d, &p)?;
    let (anova, kw) = probe_tests(&ds)?;
    [("anova", anova), ("kruskal_wallis", kw)]
        .into_iter()
        .map(|(name, tests)| {
            let pv: Vec<f64> = tests.iter().map(|t| t.p_value).collect();
            let called = bh_adjust(&pv).into_iter().map(|q| q <= q0).collect();
            let m = MethodScores {
                method: name.into(),
                probe_ids: ds.probe_ids.clone(),
                scores: pv.iter().map(|v| -v).collect(),
                called: Some(called),
            };
            align(m, ids, &d)
        })
        .collect()
}

pub fn cmd_evaluate(results: &[PathBuf], truth: &Path, out: &Path, q0: f64) -> Result<EvaluationReport> {
    if !(q0 > 0.0 && q0 < 1.0) {
        return Err(Error::Validation("q0 must lie in (0, 1)".into()));
    }
    let dirs = discover_replicates(results)?;
    let mut names = BTreeSet::new();
    let mut replicates = Vec::new();
    let mut roc_rows: BTreeMap<String, String> = BTreeMap::new();
    for dir in &dirs {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        if !names.insert(name.clone()) {
            return Err(Error::Validation(format!("replicate name {name:?} appears twice")));
        }
        let truth_path = truth_for(truth, &name)?;
        let t = io::read_truth(&truth_path)?;
        let mut methods = Vec::new();
        if dir.join(io::SUMMARY_FILE).is_file() {
            let path = dir.join(io::SUMMARY_FILE);
            methods.push(align(io::read_posterior_summary(&path)?, &t.probe_ids, &path)?);
        }
        if dir.join(io::SCORES_FILE).is_file() {
            let path = dir.join(io::SCORES_FILE);
            methods.push(align(io::read_scores(&path)?, &t.probe_ids, &path)?);
        }
        methods.extend(baseline_scores(&truth_path, &t.probe_ids, q0)?);
        let mut per_method = BTreeMap::new();
        for m in methods {
            let pts = roc_points(&m.scores, &t.differential)
                .map_err(|e| Error::Validation(format!("replicate {name}, method {}: {e}", m.method)))?;
            let rows = roc_rows.entry(m.method.clone()).or_insert_with(|| "replicate\tfpr\ttpr\n".into());
            for (fpr, tpr) in &pts {
                rows.push_str(&format!("{name}\t{fpr}\t{tpr}\n"));
            }
            let result = MethodResult {
                auc: auc(&pts),
                auc20: auc_partial(&pts, 0.2),
                auc10: auc_partial(&pts, 0.1),
                achieved_fdr: m.called.as_ref().map(|c| achieved_fdr(c, &t.differential)),
                n_called: m.called.as_ref().map(|c| c.iter().filter(|&&x| x).count()),
            };
            if per_method.insert(m.method.clone(), result).is_some() {
                return Err(Error::Validation(format!("method {} appears twice in {}", m.method, dir.display())));
            }
        }
        replicates.push(ReplicateReport {
            replicate: name,
            n_probes: t.probe_ids.len(),
            n_differential: t.differential.iter().filter(|&&d| d).count(),
            methods: per_method,
        });
    }
    let method_names: Vec<String> = replicates[0].methods.keys().cloned().collect();
    if let Some(r) = replicates
        .iter()
        .find(|r| r.methods.keys().ne(method_names.iter()))
    {
        return Err(Error::Validation(format!(
            "replicate {} has methods {:?}, expected {:?}",
            r.replicate,
            r.methods.keys().collect::<Vec<_>>(),
            method_names
        )));
    }
    let aggregate: BTreeMap<String, MethodAggregate> = method_names
        .iter()
        .map(|m| {
            let rs: Vec<&MethodResult> = replicates.iter().map(|r| &r.methods[m]).collect();
            let avg = |f: &dyn Fn(&MethodResult) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            let fdrs: Vec<f64> = rs.iter().filter_map(|r| r.achieved_fdr).collect();
            let agg = MethodAggregate {
                n_replicates: rs.len(),
                auc_mean: avg(&|r| r.auc),
                auc20_mean: avg(&|r| r.auc20),
                auc10_mean: avg(&|r| r.auc10),
                achieved_fdr_mean: (!fdrs.is_empty()).then(|| fdrs.iter().sum::<f64>() / fdrs.len() as f64),
                achieved_fdr: fdrs,
            };
            (m.clone(), agg)
        })
        .collect();
    let report = EvaluationReport {
        schema: REPORT_SCHEMA.into(),
        q0,
        replicates,
        aggregate,
    };
    for (method, rows) in &roc_rows {
        io::atomic_write(&out.join(format!("roc_{method}.tsv")), rows.as_bytes())?;
    }
    io::atomic_write(&out.join("report.tsv"), report_table(&report).as_bytes())?;
    io::write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// One row per replicate and a final `aggregate` row; columns are
/// `<method>_<metric>`.
fn report_table(report: &EvaluationReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
    let mut s = String::from("replicate");
    for m in report.aggregate.keys() {
        for metric in ["auc", "auc20", "auc10", "achieved_fdr"] {
            s.push_str(&format!("\t{m}_{metric}"));
        }
    }
    s.push('\n');
    for r in &report.replicates {
        s.push_str(&r.replicate);
        for m in r.methods.values() {
            s.push_str(&format!("\t{}\t{}\t{}\t{}", m.auc, m.auc20, m.auc10, fmt(m.achieved_fdr)));
        }
        s.push('\n');
    }
    s.push_str("aggregate");
    for a in report.aggregate.values() {
        s.push_str(&format!(
            "\t{}\t{}\t{}\t{}",
            a.auc_mean,
            a.auc20_mean,
            a.auc10_mean,
            fmt(a.achieved_fdr_mean)
        ));
    }
    s.push('\n');
    s
}
