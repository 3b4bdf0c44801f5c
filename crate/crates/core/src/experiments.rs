//! Batch experiments: many independent seeded runs per (scheme, iterations)
//! cell, per-cell summaries, budget-splitting strategies, and the CSV
//! formats they are written in.
//!
//! Every run's seed is `derive_seed(master_seed, cell, run)`, so a batch is
//! a pure function of its configuration for deterministic evaluators, and
//! appending cells leaves the streams of existing cells untouched.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Deserialize;

use crate::benchmarks::{BenchmarkId, BenchmarkInstance, OracleReport};
use crate::external::{ExternalEvaluator, ExternalEvaluatorConfig};
use crate::model::{SchemeKind, WeightingScheme};
use crate::optimizer::{self, EvalError, Evaluator, NtbeaRng, NtbeaSettings, OptimizeError};
use crate::space::{ConfigFormat, Point, SearchSpace};
use crate::stats::{self, StatsError};

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for run `run` of cell `cell`: `mix(mix(mix(master) ^ cell) ^ run)`.
pub fn derive_seed(master: u64, cell: u64, run: u64) -> u64 {
    mix64(mix64(mix64(master) ^ cell) ^ run)
}

/// Stream tag for the bootstrap generator of a cell.
const BOOTSTRAP_STREAM: u64 = u64::MAX;

pub const CI_LEVEL: f64 = 0.95;

/// Every problem found while validating a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// What is being optimised.
#[derive(Debug, Clone)]
pub enum Problem {
    Benchmark(BenchmarkInstance),
    External {
        name: String,
        space: SearchSpace,
        config: ExternalEvaluatorConfig,
    },
}

impl Problem {
    pub fn name(&self) -> String {
        match self {
            Problem::Benchmark(inst) => inst.id().to_string(),
            Problem::External { name, .. } => name.clone(),
        }
    }

    pub fn space(&self) -> &SearchSpace {
        match self {
            Problem::Benchmark(inst) => inst.space(),
            Problem::External { space, .. } => space,
        }
    }

    pub fn oracle(&self, top_k: usize) -> Option<OracleReport> {
        match self {
            Problem::Benchmark(inst) => Some(inst.grid_oracle(top_k)),
            Problem::External { .. } => None,
        }
    }

    pub fn true_value(&self, p: &Point) -> Option<f64> {
        match self {
            Problem::Benchmark(inst) => Some(inst.true_p(p)),
            Problem::External { .. } => None,
        }
    }

    /// Maps a model estimate onto the scale of [`true_value`](Self::true_value).
    /// Benchmark rewards are +1/-1 with mean `2p - 1`, so the estimate of `p` is `(e + 1) / 2`.
    pub fn to_value_scale(&self, estimate: f64) -> f64 {
        match self {
            Problem::Benchmark(_) => (estimate + 1.0) / 2.0,
            Problem::External { .. } => estimate,
        }
    }

    pub fn evaluator(&self) -> Result<Box<dyn Evaluator + '_>, EvalError> {
        match self {
            Problem::Benchmark(inst) => Ok(Box::new(inst)),
            Problem::External { space, config, .. } => {
                Ok(Box::new(ExternalEvaluator::spawn(config.clone(), space)?))
            }
        }
    }
}

fn default_k() -> f64 {
    NtbeaSettings::DEFAULT_K
}
fn default_eps() -> f64 {
    NtbeaSettings::DEFAULT_EPS
}
fn default_neighbourhood() -> usize {
    NtbeaSettings::DEFAULT_NEIGHBOURHOOD
}
fn default_decay() -> f64 {
    WeightingScheme::DEFAULT_DECAY
}
fn default_top_k() -> usize {
    6
}
fn default_resamples() -> usize {
    stats::DEFAULT_RESAMPLES
}
fn default_one() -> usize {
    1
}
fn default_timeout() -> f64 {
    ExternalEvaluatorConfig::DEFAULT_TIMEOUT.as_secs_f64()
}

/// External evaluator section of a configuration document.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    /// Program and arguments, split on whitespace.
    pub command: String,
    /// Space document path, relative to the configuration file.
    pub space: PathBuf,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub restart_on_crash: bool,
    #[serde(default)]
    pub max_restarts: u32,
}

/// Optimiser constants shared by both configuration documents.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConstants {
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_neighbourhood")]
    pub neighbourhood: usize,
    #[serde(default = "default_decay", rename = "T")]
    pub decay: f64,
}

impl Default for TuningConstants {
    fn default() -> Self {
        Self {
            k: default_k(),
            eps: default_eps(),
            neighbourhood: default_neighbourhood(),
            decay: default_decay(),
        }
    }
}

impl TuningConstants {
    fn check(&self, errors: &mut Vec<String>) {
        if !(self.k >= 0.0 && self.k.is_finite()) {
            errors.push(format!("k must be a non-negative number, got {}", self.k));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            errors.push(format!("eps must be positive, got {}", self.eps));
        }
        if self.neighbourhood == 0 {
            errors.push("neighbourhood must be at least 1".into());
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            errors.push(format!("T must be positive, got {}", self.decay));
        }
    }

    fn settings(&self, iterations: usize, scheme: WeightingScheme, seed: u64) -> NtbeaSettings {
        NtbeaSettings {
            k: self.k,
            eps: self.eps,
            neighbourhood_size: self.neighbourhood,
            ..NtbeaSettings::new(iterations, scheme, seed)
        }
    }
}

fn resolve_problem(
    benchmark: &Option<String>,
    external: &Option<ExternalSpec>,
    base_dir: &Path,
    errors: &mut Vec<String>,
) -> Option<Problem> {
    match (benchmark, external) {
        (Some(_), Some(_)) => {
            errors.push("set either `benchmark` or `[external]`, not both".into());
            None
        }
        (None, None) => {
            errors.push("one of `benchmark` or `[external]` is required".into());
            None
        }
        (Some(name), None) => match name.parse::<BenchmarkId>() {
            Ok(id) => Some(Problem::Benchmark(BenchmarkInstance::new(id))),
            Err(e) => {
                errors.push(e.to_string());
                None
            }
        },
        (None, Some(ext)) => {
            let mut ok = true;
            if ext.command.split_whitespace().next().is_none() {
                errors.push("external.command is empty".into());
                ok = false;
            }
            if !(ext.timeout_secs > 0.0 && ext.timeout_secs.is_finite()) {
                errors.push(format!("external.timeout_secs must be positive, got {}", ext.timeout_secs));
                ok = false;
            }
            let path = base_dir.join(&ext.space);
            let space = match std::fs::read_to_string(&path) {
                Ok(doc) => match SearchSpace::from_config(&doc, ConfigFormat::from_path(&path)) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        errors.push(format!("{}: {e}", path.display()));
                        None
                    }
                },
                Err(e) => {
                    errors.push(format!("cannot read {}: {e}", path.display()));
                    None
                }
            };
            let space = space?;
            if !ok {
                return None;
            }
            let config = ExternalEvaluatorConfig {
                timeout: Duration::from_secs_f64(ext.timeout_secs),
                restart_on_crash: ext.restart_on_crash,
                max_restarts: ext.max_restarts,
                ..ExternalEvaluatorConfig::from_command_line(&ext.command)
            };
            let name = ext.name.clone().unwrap_or_else(|| "external".into());
            Some(Problem::External {
                name,
                space,
                config,
            })
        }
    }
}

/// Experiment document, as read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub benchmark: Option<String>,
    #[serde(default)]
    pub external: Option<ExternalSpec>,
    pub schemes: Vec<String>,
    pub iterations: Vec<usize>,
    pub runs_per_cell: usize,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default = "default_one")]
    pub parallelism: usize,
    #[serde(flatten)]
    pub constants: TuningConstants,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(doc: &str) -> Result<Self, ConfigErrors> {
        toml::from_str(doc).map_err(|e| ConfigErrors(vec![e.to_string()]))
    }

    /// Validates everything and builds a runnable experiment. Relative paths
    /// resolve against `base_dir`; `fallback_seed` is used when the document has no seed.
    pub fn resolve(&self, base_dir: &Path, fallback_seed: u64) -> Result<Experiment, ConfigErrors> {
        let mut errors = Vec::new();
        let problem = resolve_problem(&self.benchmark, &self.external, base_dir, &mut errors);
        let schemes = parse_schemes(&self.schemes, self.constants.decay, &mut errors);
        if self.iterations.is_empty() {
            errors.push("iterations list is empty".into());
        }
        if self.iterations.contains(&0) {
            errors.push("every iterations entry must be at least 1".into());
        }
        if self.runs_per_cell == 0 {
            errors.push("runs_per_cell must be at least 1".into());
        }
        if self.parallelism == 0 {
            errors.push("parallelism must be at least 1".into());
        }
        if self.top_k == 0 {
            errors.push("top_k must be at least 1".into());
        }
        if self.bootstrap_resamples < stats::MIN_RESAMPLES {
            errors.push(format!(
                "bootstrap_resamples must be at least {}, got {}",
                stats::MIN_RESAMPLES,
                self.bootstrap_resamples
            ));
        }
        self.constants.check(&mut errors);
        match problem {
            Some(problem) if errors.is_empty() => Ok(Experiment {
                problem,
                schemes,
                iterations: self.iterations.clone(),
                runs_per_cell: self.runs_per_cell,
                master_seed: self.master_seed.unwrap_or(fallback_seed),
                parallelism: self.parallelism,
                constants: self.constants.clone(),
                top_k: self.top_k,
                bootstrap_resamples: self.bootstrap_resamples,
            }),
            _ => Err(ConfigErrors(errors)),
        }
    }
}

fn parse_schemes(names: &[String], decay: f64, errors: &mut Vec<String>) -> Vec<WeightingScheme> {
    if names.is_empty() {
        errors.push("scheme list is empty".into());
    }
    let decay = if decay > 0.0 && decay.is_finite() {
        decay
    } else {
        WeightingScheme::DEFAULT_DECAY
    };
    names
        .iter()
        .filter_map(|n| match n.parse::<SchemeKind>() {
            Ok(kind) => Some(WeightingScheme::new(kind, decay).expect("decay checked")),
            Err(e) => {
                errors.push(e.to_string());
                None
            }
        })
        .collect()
}

/// A validated, runnable experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: Problem,
    pub schemes: Vec<WeightingScheme>,
    pub iterations: Vec<usize>,
    pub runs_per_cell: usize,
    pub master_seed: u64,
    pub parallelism: usize,
    pub constants: TuningConstants,
    pub top_k: usize,
    pub bootstrap_resamples: usize,
}

impl Experiment {
    /// A benchmark experiment with the default constants.
    pub fn benchmark(id: BenchmarkId, schemes: Vec<WeightingScheme>, iterations: Vec<usize>, runs_per_cell: usize, master_seed: u64) -> Self {
        Self {
            problem: Problem::Benchmark(BenchmarkInstance::new(id)),
            schemes,
            iterations,
            runs_per_cell,
            master_seed,
            parallelism: rayon::current_num_threads(),
            constants: TuningConstants::default(),
            top_k: default_top_k(),
            bootstrap_resamples: default_resamples(),
        }
    }

    /// `(scheme, iterations)` cells in scheme-major order.
    pub fn cells(&self) -> Vec<(WeightingScheme, usize)> {
        self.schemes
            .iter()
            .flat_map(|s| self.iterations.iter().map(move |&it| (*s, it)))
            .collect()
    }
}

/// One finished run of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub cell: usize,
    pub scheme: WeightingScheme,
    pub iterations: usize,
    pub run_id: usize,
    pub seed: u64,
    pub recommended: Point,
    pub labels: Vec<String>,
    /// Model estimate in the model's own reward units.
    pub raw_estimate: f64,
    /// Model estimate on the scale of `true_value`.
    pub model_estimate: f64,
    pub true_value: Option<f64>,
}

impl ExperimentRecord {
    /// Estimate minus actual.
    pub fn delta(&self) -> Option<f64> {
        self.true_value.map(|t| self.model_estimate - t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub cell: usize,
    pub run_id: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    /// Ordered by (cell, run index).
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<RunFailure>,
}

fn with_pool<T: Send>(threads: usize, job: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(job),
        Err(_) => job(),
    }
}

/// Runs every cell `runs_per_cell` times.
pub fn repeated_runs(exp: &Experiment) -> BatchResult {
    let cells = exp.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..exp.runs_per_cell).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<Result<ExperimentRecord, RunFailure>> = with_pool(exp.parallelism, || {
        jobs.par_iter()
            .map(|&(cell, run_id)| {
                let (scheme, iterations) = cells[cell];
                let seed = derive_seed(exp.master_seed, cell as u64, run_id as u64);
                let fail = |message: String| RunFailure {
                    cell,
                    run_id,
                    seed,
                    message,
                };
                let settings = exp.constants.settings(iterations, scheme, seed);
                let mut evaluator = exp.problem.evaluator().map_err(|e| fail(e.to_string()))?;
                let (_, record) = optimizer::run(exp.problem.space(), &mut evaluator, &settings)
                    .map_err(|e| fail(e.to_string()))?;
                Ok(ExperimentRecord {
                    cell,
                    scheme,
                    iterations,
                    run_id,
                    seed,
                    labels: exp.problem.space().labels(&record.recommended),
                    true_value: exp.problem.true_value(&record.recommended),
                    raw_estimate: record.model_estimate,
                    model_estimate: exp.problem.to_value_scale(record.model_estimate),
                    recommended: record.recommended,
                })
            })
            .collect()
    });
    let mut batch = BatchResult::default();
    for outcome in outcomes {
        match outcome {
            Ok(r) => batch.records.push(r),
            Err(f) => batch.failures.push(f),
        }
    }
    batch
}

/// Aggregate statistics of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    pub runs: usize,
    /// Over true values when known, otherwise over model estimates.
    pub mean: f64,
    pub sd: f64,
    pub ci95: Option<(f64, f64)>,
    pub mean_delta: Option<f64>,
    pub delta_ci95: Option<(f64, f64)>,
    /// Fraction of runs recommending one of the oracle's top-K points.
    pub top_k_fraction: Option<f64>,
}

/// Summarises records; confidence intervals need at least two records.
pub fn summarize(
    records: &[ExperimentRecord],
    oracle: Option<&OracleReport>,
    resamples: usize,
    rng: &mut dyn RngCore,
) -> Result<SummaryStats, StatsError> {
    if records.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    let have_truth = records.iter().all(|r| r.true_value.is_some());
    let values: Vec<f64> = records
        .iter()
        .map(|r| if have_truth { r.true_value.unwrap() } else { r.model_estimate })
        .collect();
    let ci = |xs: &[f64], rng: &mut dyn RngCore| -> Result<Option<(f64, f64)>, StatsError> {
        if xs.len() < 2 {
            Ok(None)
        } else {
            stats::basic_bootstrap_ci(xs, CI_LEVEL, resamples, rng).map(Some)
        }
    };
    let ci95 = ci(&values, rng)?;
    let (mean_delta, delta_ci95) = if have_truth && oracle.is_some() {
        let deltas: Vec<f64> = records.iter().filter_map(ExperimentRecord::delta).collect();
        (Some(stats::mean(&deltas)), ci(&deltas, rng)?)
    } else {
        (None, None)
    };
    let top_k_fraction = oracle.map(|o| {
        records.iter().filter(|r| o.in_top(&r.recommended)).count() as f64 / records.len() as f64
    });
    Ok(SummaryStats {
        runs: records.len(),
        mean: stats::mean(&values),
        sd: stats::sample_sd(&values),
        ci95,
        mean_delta,
        delta_ci95,
        top_k_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: usize,
    pub scheme: WeightingScheme,
    pub iterations: usize,
    pub failures: usize,
    /// `None` when every run of the cell failed.
    pub stats: Option<SummaryStats>,
}

/// Per-cell summaries, in cell order. Bootstrap streams are seeded per cell.
pub fn summarize_batch(exp: &Experiment, batch: &BatchResult) -> Vec<CellSummary> {
    let oracle = exp.problem.oracle(exp.top_k);
    exp.cells()
        .into_iter()
        .enumerate()
        .map(|(cell, (scheme, iterations))| {
            let records: Vec<ExperimentRecord> =
                batch.records.iter().filter(|r| r.cell == cell).cloned().collect();
            let failures = batch.failures.iter().filter(|f| f.cell == cell).count();
            let mut rng = NtbeaRng::seed_from_u64(derive_seed(exp.master_seed, cell as u64, BOOTSTRAP_STREAM));
            let stats = summarize(&records, oracle.as_ref(), exp.bootstrap_resamples, &mut rng).ok();
            CellSummary {
                cell,
                scheme,
                iterations,
                failures,
                stats,
            }
        })
        .collect()
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 11] = [
    "benchmark",
    "scheme",
    "T",
    "iterations",
    "k",
    "run_id",
    "seed",
    "recommended_labels",
    "model_estimate",
    "true_value",
    "delta",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "benchmark",
    "scheme",
    "iterations",
    "runs",
    "mean",
    "sd",
    "ci_lo",
    "ci_hi",
    "delta_mean",
    "delta_ci_lo",
    "delta_ci_hi",
    "topk_fraction",
];

pub fn write_results_csv<W: Write>(
    out: W,
    problem_name: &str,
    k: f64,
    records: &[ExperimentRecord],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in records {
        w.write_record([
            problem_name.to_string(),
            r.scheme.kind().to_string(),
            r.scheme.decay().to_string(),
            r.iterations.to_string(),
            k.to_string(),
            r.run_id.to_string(),
            r.seed.to_string(),
            r.labels.join(";"),
            r.model_estimate.to_string(),
            fmt_opt(r.true_value),
            fmt_opt(r.delta()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(out: W, problem_name: &str, cells: &[CellSummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for c in cells {
        let s = c.stats.as_ref();
        w.write_record([
            problem_name.to_string(),
            c.scheme.kind().to_string(),
            c.iterations.to_string(),
            s.map(|s| s.runs).unwrap_or(0).to_string(),
            fmt_opt(s.map(|s| s.mean)),
            fmt_opt(s.map(|s| s.sd)),
            fmt_opt(s.and_then(|s| s.ci95).map(|c| c.0)),
            fmt_opt(s.and_then(|s| s.ci95).map(|c| c.1)),
            fmt_opt(s.and_then(|s| s.mean_delta)),
            fmt_opt(s.and_then(|s| s.delta_ci95).map(|c| c.0)),
            fmt_opt(s.and_then(|s| s.delta_ci95).map(|c| c.1)),
            fmt_opt(s.and_then(|s| s.top_k_fraction)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Full grid, descending by true `p`: `point_labels,true_p`.
pub fn write_oracle_csv<W: Write>(out: W, inst: &BenchmarkInstance) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["point_labels", "true_p"])?;
    for (p, v) in inst.ranked_points() {
        w.write_record([inst.space().labels(&p).join(";"), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable table of cell summaries.
pub fn format_summary_table(problem_name: &str, cells: &[CellSummary]) -> String {
    let f3 = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "{:<15} {:<5} {:>6} {:>5} {:>7} {:>6} {:>16} {:>7} {:>16} {:>6}\n",
        "benchmark", "ntbea", "iters", "runs", "mean", "sd", "95% interval", "delta", "95% interval", "topK"
    );
    for c in cells {
        let s = c.stats.as_ref();
        let pair = |x: Option<(f64, f64)>| {
            x.map(|(a, b)| format!("[{a:.3}, {b:.3}]")).unwrap_or_else(|| "-".into())
        };
        out.push_str(&format!(
            "{:<15} {:<5} {:>6} {:>5} {:>7} {:>6} {:>16} {:>7} {:>16} {:>6}\n",
            problem_name,
            c.scheme.kind().short_name().to_uppercase(),
            c.iterations,
            s.map(|s| s.runs).unwrap_or(0),
            f3(s.map(|s| s.mean)),
            f3(s.map(|s| s.sd)),
            pair(s.and_then(|s| s.ci95)),
            f3(s.and_then(|s| s.mean_delta)),
            pair(s.and_then(|s| s.delta_ci95)),
            s.and_then(|s| s.top_k_fraction)
                .map(|v| format!("{:.0}%", v * 100.0))
                .unwrap_or_else(|| "-".into()),
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Budget splitting

/// `runs` independent runs of `iterations_per_run`, then `verification_budget`
/// extra evaluations spread over the distinct recommendations.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSplitConfig {
    pub runs: usize,
    pub iterations_per_run: usize,
    pub verification_budget: usize,
    /// Defaults to `runs * iterations_per_run + verification_budget`.
    #[serde(default)]
    pub total_budget: Option<usize>,
}

impl BudgetSplitConfig {
    pub fn new(runs: usize, iterations_per_run: usize, verification_budget: usize) -> Self {
        Self {
            runs,
            iterations_per_run,
            verification_budget,
            total_budget: None,
        }
    }

    pub fn label(&self) -> String {
        format!(
            "M={},B={},V={}",
            self.runs, self.iterations_per_run, self.verification_budget
        )
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        if self.runs == 0 {
            errors.push("runs must be at least 1".to_string());
        }
        if self.iterations_per_run == 0 {
            errors.push("iterations_per_run must be at least 1".to_string());
        }
        if self.runs > 1 && self.verification_budget < self.runs {
            errors.push(format!(
                "verification_budget ({}) must be at least runs ({}) when runs > 1",
                self.verification_budget, self.runs
            ));
        }
        let needed = self
            .runs
            .checked_mul(self.iterations_per_run)
            .and_then(|x| x.checked_add(self.verification_budget));
        match (needed, self.total_budget) {
            (None, _) => errors.push("budget overflows".to_string()),
            (Some(n), Some(total)) if n > total => errors.push(format!(
                "runs * iterations_per_run + verification_budget = {n} exceeds total_budget {total}"
            )),
            _ => {}
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: Point,
    /// Best model estimate among the runs that recommended this point.
    pub provisional_estimate: f64,
    pub verification_count: usize,
    pub verification_sum: f64,
}

impl Candidate {
    pub fn verification_mean(&self) -> Option<f64> {
        (self.verification_count > 0).then(|| self.verification_sum / self.verification_count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSplitReport {
    pub chosen: Point,
    /// Distinct recommendations in lexicographic point order.
    pub candidates: Vec<Candidate>,
    pub evaluations_used: usize,
}

struct Counting<'a, E: ?Sized> {
    inner: &'a mut E,
    calls: usize,
}

impl<E: Evaluator + ?Sized> Evaluator for Counting<'_, E> {
    fn evaluate(&mut self, point: &Point, rng: &mut dyn RngCore) -> Result<f64, EvalError> {
        self.calls += 1;
        self.inner.evaluate(point, rng)
    }
}

/// Runs the split strategy and picks the candidate with the best verification mean
/// (ties: more verification, then lexicographic order).
pub fn budget_split<E: Evaluator + ?Sized>(
    cfg: &BudgetSplitConfig,
    space: &SearchSpace,
    evaluator: &mut E,
    settings: &NtbeaSettings,
) -> Result<BudgetSplitReport, OptimizeError> {
    cfg.validate()
        .map_err(|e| OptimizeError::InvalidSettings(e.join("; ")))?;
    let mut counting = Counting {
        inner: evaluator,
        calls: 0,
    };
    let mut candidates: Vec<Candidate> = Vec::new();
    for j in 0..cfg.runs {
        let run_settings = NtbeaSettings {
            iterations: cfg.iterations_per_run,
            seed: derive_seed(settings.seed, 0, j as u64),
            keep_trace: false,
            ..settings.clone()
        };
        let offset = counting.calls;
        let (_, record) = optimizer::run(space, &mut counting, &run_settings).map_err(|e| match e {
            OptimizeError::Evaluation { iteration, source } => OptimizeError::Evaluation {
                iteration: offset + iteration,
                source,
            },
            other => other,
        })?;
        match candidates.iter_mut().find(|c| c.point == record.recommended) {
            Some(c) => c.provisional_estimate = c.provisional_estimate.max(record.model_estimate),
            None => candidates.push(Candidate {
                point: record.recommended,
                provisional_estimate: record.model_estimate,
                verification_count: 0,
                verification_sum: 0.0,
            }),
        }
    }
    candidates.sort_by(|a, b| a.point.cmp(&b.point));

    // Even split; the remainder goes to the highest provisional estimates.
    let n = candidates.len();
    let base = cfg.verification_budget / n;
    let extra = cfg.verification_budget % n;
    let mut by_estimate: Vec<usize> = (0..n).collect();
    by_estimate.sort_by(|&a, &b| {
        candidates[b]
            .provisional_estimate
            .total_cmp(&candidates[a].provisional_estimate)
            .then(a.cmp(&b))
    });
    let mut quota = vec![base; n];
    for &i in by_estimate.iter().take(extra) {
        quota[i] += 1;
    }

    let mut rng = NtbeaRng::seed_from_u64(derive_seed(settings.seed, 1, 0));
    for (c, &q) in candidates.iter_mut().zip(&quota) {
        for _ in 0..q {
            let iteration = counting.calls;
            let v = counting
                .evaluate(&c.point, &mut rng)
                .map_err(|source| OptimizeError::Evaluation { iteration, source })?;
            if !v.is_finite() {
                return Err(OptimizeError::NonFinite { iteration, value: v });
            }
            c.verification_count += 1;
            c.verification_sum += v;
        }
    }

    let mut best = 0;
    for i in 1..n {
        let (a, b) = (&candidates[i], &candidates[best]);
        let ma = a.verification_mean().unwrap_or(f64::NEG_INFINITY);
        let mb = b.verification_mean().unwrap_or(f64::NEG_INFINITY);
        let better = ma > mb
            || (ma == mb && a.verification_count > b.verification_count)
            || (ma == mb
                && a.verification_count == b.verification_count
                && a.verification_count == 0
                && a.provisional_estimate > b.provisional_estimate);
        if better {
            best = i;
        }
    }
    Ok(BudgetSplitReport {
        chosen: candidates[best].point.clone(),
        candidates,
        evaluations_used: counting.calls,
    })
}

/// Budget-split batch document, as read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSplitExperimentConfig {
    #[serde(default)]
    pub benchmark: Option<String>,
    #[serde(default)]
    pub external: Option<ExternalSpec>,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_one")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default = "default_one")]
    pub parallelism: usize,
    #[serde(flatten)]
    pub constants: TuningConstants,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    pub strategies: Vec<BudgetSplitConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_scheme() -> String {
    "std".into()
}

impl BudgetSplitExperimentConfig {
    pub fn from_toml(doc: &str) -> Result<Self, ConfigErrors> {
        toml::from_str(doc).map_err(|e| ConfigErrors(vec![e.to_string()]))
    }

    pub fn resolve(&self, base_dir: &Path, fallback_seed: u64) -> Result<BudgetSplitExperiment, ConfigErrors> {
        let mut errors = Vec::new();
        let problem = resolve_problem(&self.benchmark, &self.external, base_dir, &mut errors);
        let scheme = parse_schemes(std::slice::from_ref(&self.scheme), self.constants.decay, &mut errors);
        if self.strategies.is_empty() {
            errors.push("strategies list is empty".into());
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if let Err(es) = s.validate() {
                errors.extend(es.into_iter().map(|e| format!("strategy {}: {e}", i + 1)));
            }
        }
        if self.replications == 0 {
            errors.push("replications must be at least 1".into());
        }
        if self.parallelism == 0 {
            errors.push("parallelism must be at least 1".into());
        }
        if self.bootstrap_resamples < stats::MIN_RESAMPLES {
            errors.push(format!("bootstrap_resamples must be at least {}", stats::MIN_RESAMPLES));
        }
        self.constants.check(&mut errors);
        match (problem, scheme.first()) {
            (Some(problem), Some(&scheme)) if errors.is_empty() => Ok(BudgetSplitExperiment {
                problem,
                scheme,
                strategies: self.strategies.clone(),
                replications: self.replications,
                master_seed: self.master_seed.unwrap_or(fallback_seed),
                parallelism: self.parallelism,
                constants: self.constants.clone(),
                bootstrap_resamples: self.bootstrap_resamples,
            }),
            _ => Err(ConfigErrors(errors)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BudgetSplitExperiment {
    pub problem: Problem,
    pub scheme: WeightingScheme,
    pub strategies: Vec<BudgetSplitConfig>,
    pub replications: usize,
    pub master_seed: u64,
    pub parallelism: usize,
    pub constants: TuningConstants,
    pub bootstrap_resamples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSplitOutcome {
    pub strategy: usize,
    pub replication: usize,
    pub seed: u64,
    pub report: BudgetSplitReport,
    pub true_value: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct BudgetSplitBatch {
    /// Ordered by (strategy, replication).
    pub outcomes: Vec<BudgetSplitOutcome>,
    pub failures: Vec<RunFailure>,
}

pub fn run_budget_split_batch(exp: &BudgetSplitExperiment) -> BudgetSplitBatch {
    let jobs: Vec<(usize, usize)> = (0..exp.strategies.len())
        .flat_map(|s| (0..exp.replications).map(move |r| (s, r)))
        .collect();
    let results: Vec<Result<BudgetSplitOutcome, RunFailure>> = with_pool(exp.parallelism, || {
        jobs.par_iter()
            .map(|&(strategy, replication)| {
                let seed = derive_seed(exp.master_seed, strategy as u64, replication as u64);
                let fail = |message: String| RunFailure {
                    cell: strategy,
                    run_id: replication,
                    seed,
                    message,
                };
                let cfg = &exp.strategies[strategy];
                let settings = exp.constants.settings(cfg.iterations_per_run, exp.scheme, seed);
                let mut evaluator = exp.problem.evaluator().map_err(|e| fail(e.to_string()))?;
                let report = budget_split(cfg, exp.problem.space(), &mut evaluator, &settings)
                    .map_err(|e| fail(e.to_string()))?;
                Ok(BudgetSplitOutcome {
                    strategy,
                    replication,
                    seed,
                    true_value: exp.problem.true_value(&report.chosen),
                    report,
                })
            })
            .collect()
    });
    let mut batch = BudgetSplitBatch::default();
    for r in results {
        match r {
            Ok(o) => batch.outcomes.push(o),
            Err(f) => batch.failures.push(f),
        }
    }
    batch
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub strategy: usize,
    pub replications: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub ci95: Option<(f64, f64)>,
}

pub fn summarize_budget_split(exp: &BudgetSplitExperiment, batch: &BudgetSplitBatch) -> Vec<StrategySummary> {
    (0..exp.strategies.len())
        .map(|strategy| {
            let values: Vec<f64> = batch
                .outcomes
                .iter()
                .filter(|o| o.strategy == strategy)
                .filter_map(|o| o.true_value)
                .collect();
            let mut rng = NtbeaRng::seed_from_u64(derive_seed(exp.master_seed, strategy as u64, BOOTSTRAP_STREAM));
            let ci95 = if values.len() >= 2 {
                stats::basic_bootstrap_ci(&values, CI_LEVEL, exp.bootstrap_resamples, &mut rng).ok()
            } else {
                None
            };
            StrategySummary {
                strategy,
                replications: batch.outcomes.iter().filter(|o| o.strategy == strategy).count(),
                mean: (!values.is_empty()).then(|| stats::mean(&values)),
                sd: (!values.is_empty()).then(|| stats::sample_sd(&values)),
                ci95,
            }
        })
        .collect()
}

pub fn write_budget_split_csv<W: Write>(out: W, exp: &BudgetSplitExperiment, batch: &BudgetSplitBatch) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "benchmark",
        "strategy",
        "replication",
        "seed",
        "chosen_labels",
        "verification_mean",
        "verification_count",
        "candidates",
        "evaluations",
        "true_value",
    ])?;
    let space = exp.problem.space();
    for o in &batch.outcomes {
        let chosen = o
            .report
            .candidates
            .iter()
            .find(|c| c.point == o.report.chosen)
            .expect("chosen point is a candidate");
        w.write_record([
            exp.problem.name(),
            exp.strategies[o.strategy].label(),
            o.replication.to_string(),
            o.seed.to_string(),
            space.labels(&o.report.chosen).join(";"),
            fmt_opt(chosen.verification_mean()),
            chosen.verification_count.to_string(),
            o.report.candidates.len().to_string(),
            o.report.evaluations_used.to_string(),
            fmt_opt(o.true_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_candidates_csv<W: Write>(out: W, exp: &BudgetSplitExperiment, batch: &BudgetSplitBatch) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "strategy",
        "replication",
        "candidate_labels",
        "provisional_estimate",
        "verification_count",
        "verification_mean",
        "chosen",
        "true_value",
    ])?;
    let space = exp.problem.space();
    for o in &batch.outcomes {
        for c in &o.report.candidates {
            w.write_record([
                exp.strategies[o.strategy].label(),
                o.replication.to_string(),
                space.labels(&c.point).join(";"),
                c.provisional_estimate.to_string(),
                c.verification_count.to_string(),
                fmt_opt(c.verification_mean()),
                (c.point == o.report.chosen).to_string(),
                fmt_opt(exp.problem.true_value(&c.point)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
