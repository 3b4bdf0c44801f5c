//! Command-line front end. Each subcommand parses its flags, hands the work to
//! the library and maps the outcome to an exit status.

use std::error::Error;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::benchmarks::{BenchmarkId, BenchmarkInstance};
use crate::experiments::{
    self, BudgetSplitExperimentConfig, ExperimentConfig, ExperimentRecord, Problem,
};
use crate::external::{protocol_check, ExternalEvaluatorConfig};
use crate::model::{SchemeKind, WeightingScheme};
use crate::optimizer::{self, NtbeaSettings};
use crate::space::{ConfigFormat, SearchSpace};

type CliResult = Result<ExitCode, Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(name = "ntbea", version, about = "N-Tuple Bandit Evolutionary Algorithm")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one optimisation and print the recommendation.
    Optimize(OptimizeArgs),
    /// Enumerate a benchmark grid and report its exact optimum.
    Oracle(OracleArgs),
    /// Run a batch of repeated runs described by a TOML document.
    Experiment(BatchArgs),
    /// Compare budget-splitting strategies described by a TOML document.
    BudgetSplit(BatchArgs),
    /// Check that an evaluator process follows the line protocol.
    ProtocolCheck(ProtocolCheckArgs),
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Search space document (JSON or TOML); requires --evaluator-cmd.
    #[arg(long, conflicts_with = "benchmark", required_unless_present = "benchmark")]
    pub space: Option<PathBuf>,
    /// Built-in benchmark: hartmann3, hartmann6, branin, goldsteinprice.
    #[arg(long)]
    pub benchmark: Option<BenchmarkId>,
    #[arg(long)]
    pub iterations: usize,
    /// std, lin, inv, sqrt or exp.
    #[arg(long, default_value = "std")]
    pub scheme: SchemeKind,
    #[arg(long, default_value_t = NtbeaSettings::DEFAULT_K)]
    pub k: f64,
    /// Decay constant of the weighted schemes.
    #[arg(long = "T", default_value_t = WeightingScheme::DEFAULT_DECAY)]
    pub decay: f64,
    #[arg(long, default_value_t = NtbeaSettings::DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = NtbeaSettings::DEFAULT_NEIGHBOURHOOD)]
    pub neighbourhood: usize,
    #[arg(long, env = "NTBEA_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Evaluator program and arguments, whitespace-separated.
    #[arg(long)]
    pub evaluator_cmd: Option<String>,
    /// Per-evaluation timeout in seconds for external evaluators.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    /// Write a single-row results CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub benchmark: BenchmarkId,
    #[arg(long, default_value_t = 6)]
    pub top: usize,
    /// Write the full ranked grid as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Worker threads; overrides the document.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Output directory; overrides the document. Defaults to the current directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolCheckArgs {
    #[arg(long)]
    pub evaluator_cmd: String,
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub probes: usize,
    /// Seconds to wait for each expected line.
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
    #[arg(long, env = "NTBEA_SEED", default_value_t = 0)]
    pub seed: u64,
}

/// Parses `std::env::args` and runs the chosen subcommand.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

pub fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Optimize(a) => optimize(a),
        Command::Oracle(a) => oracle(a),
        Command::Experiment(a) => experiment(a),
        Command::BudgetSplit(a) => budget_split(a),
        Command::ProtocolCheck(a) => check(a),
    }
}

fn read_space(path: &Path) -> Result<SearchSpace, Box<dyn Error>> {
    let doc = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    SearchSpace::from_config(&doc, ConfigFormat::from_path(path))
        .map_err(|e| format!("{}: {e}", path.display()).into())
}

fn timeout(secs: f64) -> Result<Duration, Box<dyn Error>> {
    if secs > 0.0 && secs.is_finite() {
        Ok(Duration::from_secs_f64(secs))
    } else {
        Err(format!("timeout must be positive, got {secs}").into())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Box<dyn Error>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path).map_err(|e| format!("cannot create {}: {e}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn optimize(a: OptimizeArgs) -> CliResult {
    let scheme = WeightingScheme::new(a.scheme, a.decay)?;
    let problem = match (&a.benchmark, &a.space) {
        (Some(id), None) => Problem::Benchmark(BenchmarkInstance::new(*id)),
        (None, Some(path)) => {
            let space = read_space(path)?;
            let cmd = a
                .evaluator_cmd
                .as_deref()
                .ok_or("--space needs --evaluator-cmd")?;
            let config = ExternalEvaluatorConfig {
                timeout: timeout(a.timeout)?,
                ..ExternalEvaluatorConfig::from_command_line(cmd)
            };
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "external".into());
            Problem::External { name, space, config }
        }
        _ => return Err("give exactly one of --space and --benchmark".into()),
    };
    let settings = NtbeaSettings {
        k: a.k,
        eps: a.eps,
        neighbourhood_size: a.neighbourhood,
        ..NtbeaSettings::new(a.iterations, scheme, a.seed)
    };
    let mut evaluator = problem.evaluator().map_err(|e| e.to_string())?;
    let (_, record) = optimizer::run(problem.space(), &mut evaluator, &settings)?;
    drop(evaluator);

    let row = ExperimentRecord {
        cell: 0,
        scheme,
        iterations: a.iterations,
        run_id: 0,
        seed: a.seed,
        labels: problem.space().labels(&record.recommended),
        true_value: problem.true_value(&record.recommended),
        raw_estimate: record.model_estimate,
        model_estimate: problem.to_value_scale(record.model_estimate),
        recommended: record.recommended,
    };
    println!("recommended: {}", row.labels.join(" "));
    println!("model estimate: {:.6}", row.model_estimate);
    if let Some(t) = row.true_value {
        println!("true value: {t:.6}");
    }
    if let Some(path) = &a.out {
        experiments::write_results_csv(create(path)?, &problem.name(), a.k, std::slice::from_ref(&row))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn oracle(a: OracleArgs) -> CliResult {
    if a.top == 0 {
        return Err("--top must be at least 1".into());
    }
    let inst = BenchmarkInstance::new(a.benchmark);
    let report = inst.grid_oracle(a.top);
    let mut out = io::stdout().lock();
    writeln!(out, "benchmark: {}", a.benchmark)?;
    writeln!(out, "grid points: {}", inst.space().point_count())?;
    writeln!(out, "max p: {:.6}", report.max_p)?;
    writeln!(out, "nonzero fraction: {:.6}", report.nonzero_fraction)?;
    for p in &report.argmax {
        writeln!(out, "argmax: {}", inst.space().labels(p).join(" "))?;
    }
    writeln!(out, "top {}:", a.top)?;
    for (p, v) in &report.top {
        writeln!(out, "  {:.6}  {}", v, inst.space().labels(p).join(" "))?;
    }
    if let Some(path) = &a.out {
        experiments::write_oracle_csv(create(path)?, &inst)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn fallback_seed() -> Result<u64, Box<dyn Error>> {
    match std::env::var("NTBEA_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| format!("NTBEA_SEED is not an unsigned integer: {s:?}").into()),
        Err(_) => Ok(0),
    }
}

fn batch_inputs(a: &BatchArgs) -> Result<(String, PathBuf), Box<dyn Error>> {
    let doc = fs::read_to_string(&a.config)
        .map_err(|e| format!("cannot read {}: {e}", a.config.display()))?;
    let base = a
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    Ok((doc, base))
}

fn output_dir(flag: &Option<PathBuf>, doc: &Option<PathBuf>, base: &Path) -> PathBuf {
    match (flag, doc) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => base.join(p),
        (None, None) => PathBuf::from("."),
    }
}

fn experiment(a: BatchArgs) -> CliResult {
    let (doc, base) = batch_inputs(&a)?;
    let cfg = ExperimentConfig::from_toml(&doc)?;
    let mut exp = cfg.resolve(&base, fallback_seed()?)?;
    if let Some(n) = a.parallel {
        if n == 0 {
            return Err("--parallel must be at least 1".into());
        }
        exp.parallelism = n;
    }
    let dir = output_dir(&a.out, &cfg.output, &base);
    let batch = experiments::repeated_runs(&exp);
    let cells = experiments::summarize_batch(&exp, &batch);
    let name = exp.problem.name();

    experiments::write_results_csv(create(&dir.join("results.csv"))?, &name, exp.constants.k, &batch.records)?;
    experiments::write_summary_csv(create(&dir.join("summary.csv"))?, &name, &cells)?;
    print!("{}", experiments::format_summary_table(&name, &cells));
    report_failures(&batch.failures)
}

fn report_failures(failures: &[experiments::RunFailure]) -> CliResult {
    for f in failures {
        eprintln!(
            "run failed (cell {}, run {}, seed {}): {}",
            f.cell, f.run_id, f.seed, f.message
        );
    }
    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} run(s) failed", failures.len());
        Ok(ExitCode::FAILURE)
    }
}

fn budget_split(a: BatchArgs) -> CliResult {
    let (doc, base) = batch_inputs(&a)?;
    let cfg = BudgetSplitExperimentConfig::from_toml(&doc)?;
    let mut exp = cfg.resolve(&base, fallback_seed()?)?;
    if let Some(n) = a.parallel {
        if n == 0 {
            return Err("--parallel must be at least 1".into());
        }
        exp.parallelism = n;
    }
    let dir = output_dir(&a.out, &cfg.output, &base);
    let batch = experiments::run_budget_split_batch(&exp);
    let summaries = experiments::summarize_budget_split(&exp, &batch);

    experiments::write_budget_split_csv(create(&dir.join("budget_split.csv"))?, &exp, &batch)?;
    experiments::write_candidates_csv(create(&dir.join("candidates.csv"))?, &exp, &batch)?;

    let space = exp.problem.space();
    let mut out = io::stdout().lock();
    for o in batch.outcomes.iter().filter(|o| o.replication == 0) {
        writeln!(out, "{} (replication 0)", exp.strategies[o.strategy].label())?;
        writeln!(out, "  chosen: {}", space.labels(&o.report.chosen).join(" "))?;
        for c in &o.report.candidates {
            writeln!(
                out,
                "  candidate {:<40} provisional {:>8.4}  verified {:>5} x mean {}",
                space.labels(&c.point).join(" "),
                c.provisional_estimate,
                c.verification_count,
                c.verification_mean()
                    .map(|m| format!("{m:.4}"))
                    .unwrap_or_else(|| "-".into())
            )?;
        }
    }
    let f3 = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    writeln!(out, "{:<22} {:>5} {:>7} {:>6} {:>16}", "strategy", "reps", "mean", "sd", "95% interval")?;
    for s in &summaries {
        writeln!(
            out,
            "{:<22} {:>5} {:>7} {:>6} {:>16}",
            exp.strategies[s.strategy].label(),
            s.replications,
            f3(s.mean),
            f3(s.sd),
            s.ci95
                .map(|(lo, hi)| format!("[{lo:.3}, {hi:.3}]"))
                .unwrap_or_else(|| "-".into())
        )?;
    }
    drop(out);
    report_failures(&batch.failures)
}

fn check(a: ProtocolCheckArgs) -> CliResult {
    let space = read_space(&a.space)?;
    let cfg = ExternalEvaluatorConfig {
        timeout: timeout(a.timeout)?,
        ..ExternalEvaluatorConfig::from_command_line(&a.evaluator_cmd)
    };
    let report = protocol_check(&cfg, &space, a.probes, a.seed);
    for line in &report.passed {
        println!("ok: {line}");
    }
    for line in &report.violations {
        println!("violation: {line}");
    }
    if report.is_ok() {
        println!("OK");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAILED");
        Ok(ExitCode::FAILURE)
    }
}
