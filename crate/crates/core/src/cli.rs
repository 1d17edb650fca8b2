//! Command-line front end. Every run that writes `--out FILE` also writes
//! `FILE.manifest.json` with the arguments, seed, version and status.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::diagnostics::{self, GofSummary};
use crate::error::{Error, Result};
use crate::estimator::{fit, params_from_json, FitConfig, FitReport, StartScheme, WindowInfo};
use crate::experiment::{
    convergence_experiment, recovery_experiment, table1_reference_mean, table1_reference_std, ConvergenceConfig,
    RecoveryConfig,
};
use crate::ingest::{self, PreprocessConfig, QuoteFormat, WindowMode};
use crate::intensity::{CoreParams, ModelVariant, ParamSet};
use crate::market::{EventKind, MarketState, Price};
use crate::optim::Optimizer;
use crate::simulator::{simulate_with_stats, JumpSource, JumpTable, SimConfig, StopRule};

pub const MANIFEST_SCHEMA: &str = "spread-hawkes/manifest/v1";
pub const JOBS_ENV: &str = "SPREAD_HAWKES_JOBS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spread-hawkes", version, about = "Spread-dependent Hawkes model of best bid/ask dynamics")]
pub struct Cli {
    /// Worker threads for batch commands [env: SPREAD_HAWKES_JOBS; default: all cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a quote CSV into a validated event stream.
    Preprocess(PreprocessArgs),
    /// Maximum-likelihood fit of one stream.
    Fit(FitArgs),
    /// Fits over overlapping intraday windows.
    FitRolling(RollingArgs),
    /// Simulate an event stream from fitted or hand-written parameters.
    Simulate(SimulateArgs),
    /// AIC/BIC table over model variants.
    Select(SelectArgs),
    /// Time-change residuals, Q-Q points and KS statistics.
    Diagnose(DiagnoseArgs),
    /// Simulation studies.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Excitation averages, liquidity ratios and stability from a set of fits.
    Analytics(AnalyticsArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "0.01")]
    pub tick: Price,
    #[arg(long, default_value = "10:00-15:30", value_parser = parse_session)]
    pub session: ingest::SessionWindow,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct FitOpts {
    #[arg(long, default_value = "proposed")]
    pub variant: ModelVariant,
    #[arg(long, default_value_t = 100.0)]
    pub beta0: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// simplex or quasi-newton
    #[arg(long, default_value = "simplex")]
    pub optimizer: Optimizer,
    /// Draw every starting point at random instead of starting from event rates.
    #[arg(long)]
    pub random_starts: bool,
    /// Hold a parameter fixed, e.g. `--fix eta=0`.
    #[arg(long, value_parser = parse_fixed)]
    pub fix: Vec<(String, f64)>,
    #[arg(long)]
    pub no_se: bool,
    #[arg(long, default_value_t = 50)]
    pub min_events: usize,
}

impl FitOpts {
    fn config(&self) -> FitConfig {
        FitConfig {
            variant: self.variant,
            beta0: self.beta0,
            restarts: self.restarts,
            seed: self.seed,
            optimizer: self.optimizer,
            start_scheme: if self.random_starts { StartScheme::Random } else { StartScheme::Heuristic },
            fixed: self.fix.clone(),
            compute_se: !self.no_se,
            min_events_per_process: self.min_events,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[command(flatten)]
    pub opts: FitOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RollingArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, default_value = "3m", value_parser = ingest::parse_duration)]
    pub window: f64,
    #[arg(long, default_value = "1m", value_parser = ingest::parse_duration)]
    pub step: f64,
    #[command(flatten)]
    pub opts: FitOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Fit report or parameter-set JSON.
    #[arg(long)]
    pub params: PathBuf,
    /// Seconds to simulate.
    #[arg(long, conflicts_with = "n_events", required_unless_present = "n_events")]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub n_events: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Jump sizes in ticks as CSV `kind,delta,prob`; one-tick jumps otherwise.
    #[arg(long, conflicts_with = "jump_size")]
    pub jumps: Option<PathBuf>,
    #[arg(long)]
    pub jump_size: Option<u32>,
    /// Parameter switch `TIME=FILE`, repeatable.
    #[arg(long = "switch", value_parser = parse_switch)]
    pub switches: Vec<(f64, PathBuf)>,
    #[arg(long, default_value = "100.00")]
    pub bid: Price,
    #[arg(long, default_value = "100.01")]
    pub ask: Price,
    #[arg(long, default_value = "0.01")]
    pub tick: Price,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long, default_value = "proposed,basic,ext1..ext5", value_parser = parse_variants)]
    pub variants: VariantList,
    #[arg(long, default_value_t = 100.0)]
    pub beta0: f64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "simplex")]
    pub optimizer: Optimizer,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Q-Q points, one row per residual.
    #[arg(long)]
    pub out: PathBuf,
    /// KS summary; defaults to `<out>.gof.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    /// Parameter recovery at a reference parameter row.
    Table1(Table1Args),
    /// Success rate of fits from random starts across a grid of beta0.
    Convergence(ConvergenceArgs),
}

#[derive(Debug, Args)]
pub struct Table1Args {
    #[arg(long, default_value_t = 1)]
    pub row: usize,
    #[arg(long, default_value_t = 100)]
    pub paths: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_events: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long, default_value_t = 400.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 5_000)]
    pub n_events: usize,
    #[arg(long, value_delimiter = ',', default_value = "10,50,100,400")]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "simplex")]
    pub optimizer: Optimizer,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyticsArgs {
    /// Fit CSVs (from fit-rolling) or fit-report JSONs, in time order; repeatable.
    #[arg(long, required = true, num_args = 1..)]
    pub fits: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub ma_window: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_session(s: &str) -> std::result::Result<ingest::SessionWindow, String> {
    ingest::parse_session(s)
}

/// Comma-separated variants; `ext1..ext5` expands to the range.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantList(pub Vec<ModelVariant>);

fn parse_variants(s: &str) -> std::result::Result<VariantList, String> {
    ModelVariant::parse_list(s).map(VariantList)
}

fn parse_fixed(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().parse().map_err(|_| format!("bad value in {s:?}"))?))
}

fn parse_switch(s: &str) -> std::result::Result<(f64, PathBuf), String> {
    let (t, f) = s.split_once('=').ok_or_else(|| format!("expected TIME=FILE, got {s:?}"))?;
    let t: f64 = t.trim().parse().map_err(|_| format!("bad switch time in {s:?}"))?;
    Ok((t, PathBuf::from(f.trim())))
}

/// Failure of a run, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn from_error(e: &Error) -> Self {
        let (code, kind) = match e {
            Error::Config(_) => (EXIT_USAGE, "config"),
            Error::Io(_) => (EXIT_DATA, "io"),
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) | Error::TooManyMalformed { .. } => {
                (EXIT_DATA, "parse")
            }
            Error::InvalidParams(_) => (EXIT_DATA, "params"),
            _ => (EXIT_DATA, "data"),
        };
        CliError { code, kind, message: e.to_string() }
    }

    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind, "message": self.message, "exit_code": self.code}}).to_string()
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &recorded) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.code
        }
    }
}

fn jobs(cli_jobs: Option<usize>) -> std::result::Result<usize, CliError> {
    let from_env = std::env::var(JOBS_ENV).ok().filter(|s| !s.is_empty());
    let n = match (cli_jobs, from_env) {
        (Some(n), _) => n,
        (None, Some(s)) => s.parse().map_err(|_| usage(format!("{JOBS_ENV} must be a positive integer, got {s:?}")))?,
        (None, None) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    if n == 0 {
        return Err(usage("--jobs must be at least 1".into()));
    }
    Ok(n)
}

fn usage(message: String) -> CliError {
    CliError { code: EXIT_USAGE, kind: "usage", message }
}

pub fn run(cli: Cli, argv: &[String]) -> std::result::Result<(), CliError> {
    let jobs = jobs(cli.jobs)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| usage(e.to_string()))?;
    let (out, seed) = out_and_seed(&cli.command);
    let started = Instant::now();
    let mut run = Run::default();
    let result = pool.install(|| dispatch(&cli.command, &mut run));
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: command_name(&cli.command),
        args: argv.to_vec(),
        seed,
        jobs,
        status: if result.is_ok() && run.failures.is_empty() { "ok" } else { "error" },
        error: result.as_ref().err().map(|e| e.to_string()),
        outputs: run.outputs.iter().map(|p| p.display().to_string()).collect(),
        failures: run.failures.clone(),
        summary: run.summary.take(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let manifest_path = sidecar(out, "manifest.json");
    let written = serde_json::to_string_pretty(&manifest)
        .map_err(Error::from)
        .and_then(|s| std::fs::write(&manifest_path, s + "\n").map_err(Error::from));
    result.map_err(|e| CliError::from_error(&e))?;
    written.map_err(|e| CliError::from_error(&e))?;
    if !run.failures.is_empty() {
        return Err(CliError {
            code: EXIT_DATA,
            kind: "partial",
            message: format!(
                "{} unit(s) failed; completed results kept, see {}",
                run.failures.len(),
                manifest_path.display()
            ),
        });
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest {
    schema: &'static str,
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    args: Vec<String>,
    seed: Option<u64>,
    jobs: usize,
    status: &'static str,
    error: Option<String>,
    outputs: Vec<String>,
    failures: Vec<Failure>,
    summary: Option<serde_json::Value>,
    wall_time_secs: f64,
}

#[derive(Clone, Debug, Serialize)]
struct Failure {
    unit: String,
    error: String,
}

#[derive(Default)]
struct Run {
    outputs: Vec<PathBuf>,
    failures: Vec<Failure>,
    summary: Option<serde_json::Value>,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Preprocess(_) => "preprocess",
        Command::Fit(_) => "fit",
        Command::FitRolling(_) => "fit-rolling",
        Command::Simulate(_) => "simulate",
        Command::Select(_) => "select",
        Command::Diagnose(_) => "diagnose",
        Command::Experiment(ExperimentCmd::Table1(_)) => "experiment table1",
        Command::Experiment(ExperimentCmd::Convergence(_)) => "experiment convergence",
        Command::Analytics(_) => "analytics",
    }
}

fn out_and_seed(c: &Command) -> (&Path, Option<u64>) {
    match c {
        Command::Preprocess(a) => (&a.out, Some(a.seed)),
        Command::Fit(a) => (&a.out, Some(a.opts.seed)),
        Command::FitRolling(a) => (&a.out, Some(a.opts.seed)),
        Command::Simulate(a) => (&a.out, Some(a.seed)),
        Command::Select(a) => (&a.out, Some(a.seed)),
        Command::Diagnose(a) => (&a.out, None),
        Command::Experiment(ExperimentCmd::Table1(a)) => (&a.out, Some(a.seed)),
        Command::Experiment(ExperimentCmd::Convergence(a)) => (&a.out, Some(a.seed)),
        Command::Analytics(a) => (&a.out, None),
    }
}

/// `out.ext` plus `.suffix`, e.g. `fit.json.manifest.json`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn create(path: &Path, run: &mut Run) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(with_path(path))?;
    run.outputs.push(path.to_path_buf());
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T, run: &mut Run) -> Result<()> {
    let mut w = create(path, run)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(with_path(path))
}

fn read_stream(path: &Path) -> Result<crate::market::EventStream> {
    ingest::read_events(open(path)?)
}

fn read_params(path: &Path) -> Result<ParamSet> {
    params_from_json(&std::fs::read_to_string(path).map_err(with_path(path))?)
}

fn dispatch(cmd: &Command, run: &mut Run) -> Result<()> {
    match cmd {
        Command::Preprocess(a) => cmd_preprocess(a, run),
        Command::Fit(a) => cmd_fit(a, run),
        Command::FitRolling(a) => cmd_fit_rolling(a, run),
        Command::Simulate(a) => cmd_simulate(a, run),
        Command::Select(a) => cmd_select(a, run),
        Command::Diagnose(a) => cmd_diagnose(a, run),
        Command::Experiment(ExperimentCmd::Table1(a)) => cmd_table1(a, run),
        Command::Experiment(ExperimentCmd::Convergence(a)) => cmd_convergence(a, run),
        Command::Analytics(a) => cmd_analytics(a, run),
    }
}

fn cmd_preprocess(a: &PreprocessArgs, run: &mut Run) -> Result<()> {
    let parsed = ingest::parse_quotes(open(&a.input)?, &QuoteFormat::default())?;
    let cfg = PreprocessConfig { session: a.session, tick: a.tick, seed: a.seed, unit_ns: parsed.unit_ns() };
    let (stream, report) = ingest::preprocess(&parsed.quotes, &cfg)?;
    let mut w = create(&a.out, run)?;
    ingest::write_events(&stream, &mut w)?;
    w.flush()?;
    let report_path = a.report.clone().unwrap_or_else(|| sidecar(&a.out, "report.json"));
    let full = json!({
        "preprocess": report,
        "malformed_rows": parsed.malformed.len(),
        "resolution_digits": parsed.resolution_digits,
        "date": parsed.header_date,
    });
    write_json(&report_path, &full, run)?;
    if !parsed.malformed.is_empty() {
        let mut w = create(&sidecar(&a.out, "malformed.csv"), run)?;
        ingest::write_malformed(&parsed.malformed, &mut w)?;
    }
    if report.empty_stream {
        eprintln!("warning: no events inside the session window");
    }
    run.summary = Some(serde_json::to_value(&report)?);
    Ok(())
}

fn cmd_fit(a: &FitArgs, run: &mut Run) -> Result<()> {
    let stream = read_stream(&a.events)?;
    let rep = fit(&stream, &a.opts.config())?;
    write_json(&a.out, &rep, run)?;
    run.summary = Some(json!({
        "log_likelihood": rep.log_likelihood,
        "aic": rep.aic,
        "converged": rep.converged,
        "unreliable": rep.unreliable,
    }));
    Ok(())
}

fn cmd_fit_rolling(a: &RollingArgs, run: &mut Run) -> Result<()> {
    let stream = read_stream(&a.events)?;
    let wins = ingest::windows(&stream, WindowMode::Intraday { length: a.window, step: a.step })?;
    let mut cfg = a.opts.config();
    // windows already run in parallel
    cfg.parallel = false;
    let results: Vec<Result<FitReport>> = wins
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i as u64);
            let mut rep = fit(w, &c)?;
            rep.window = WindowInfo { index: i, start: w.session_start(), end: w.session_end() };
            Ok(rep)
        })
        .collect();
    let mut w = csv::Writer::from_writer(create(&a.out, run)?);
    w.write_record(FitReport::csv_header(cfg.variant))?;
    let mut ok = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(rep) => {
                w.write_record(rep.csv_record())?;
                ok += 1;
            }
            Err(e) => run.failures.push(Failure { unit: format!("window {i}"), error: e.to_string() }),
        }
    }
    w.flush()?;
    run.summary = Some(json!({"windows": wins.len(), "fitted": ok}));
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, run: &mut Run) -> Result<()> {
    let params = read_params(&a.params)?;
    let stop = match (a.horizon, a.n_events) {
        (Some(h), _) => StopRule::Horizon(h),
        (None, Some(n)) => StopRule::Events(n),
        (None, None) => return Err(Error::Config("give --horizon or --n-events".into())),
    };
    let mut cfg = SimConfig::new(params, stop, a.seed);
    cfg.tick = a.tick;
    cfg.initial_state = MarketState::new(a.bid, a.ask, a.tick)?;
    cfg.jumps = match (&a.jumps, a.jump_size) {
        (Some(p), _) => JumpSource::Table(JumpTable::from_csv(p)?),
        (None, Some(d)) => JumpSource::Constant(d),
        (None, None) => JumpSource::Constant(1),
    };
    for (t, p) in &a.switches {
        cfg.schedule.push((*t, read_params(p)?));
    }
    cfg.schedule.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (stream, stats) = simulate_with_stats(&cfg)?;
    let mut w = create(&a.out, run)?;
    ingest::write_events(&stream, &mut w)?;
    w.flush()?;
    run.summary = Some(json!({"events": stream.len(), "counts": stream.counts(), "stats": stats}));
    Ok(())
}

#[derive(Serialize)]
struct SelectRow {
    variant: ModelVariant,
    k: usize,
    n_events: usize,
    log_likelihood: f64,
    aic: f64,
    bic: f64,
    delta_aic: f64,
    delta_bic: f64,
    aic_rank: usize,
    converged: bool,
}

fn cmd_select(a: &SelectArgs, run: &mut Run) -> Result<()> {
    let stream = read_stream(&a.events)?;
    let results: Vec<Result<FitReport>> = a
        .variants
        .0
        .par_iter()
        .map(|&v| {
            let cfg = FitConfig {
                variant: v,
                beta0: a.beta0,
                restarts: a.restarts,
                seed: a.seed,
                optimizer: a.optimizer,
                compute_se: false,
                parallel: false,
                ..Default::default()
            };
            fit(&stream, &cfg)
        })
        .collect();
    let mut fits = Vec::new();
    for (v, r) in a.variants.0.iter().zip(results) {
        match r {
            Ok(rep) => fits.push(rep),
            Err(e) => run.failures.push(Failure { unit: v.to_string(), error: e.to_string() }),
        }
    }
    let best_aic = fits.iter().map(|f| f.aic).fold(f64::INFINITY, f64::min);
    let best_bic = fits.iter().map(|f| f.bic).fold(f64::INFINITY, f64::min);
    let mut rows: Vec<SelectRow> = fits
        .iter()
        .map(|f| SelectRow {
            variant: f.params.variant(),
            k: f.k,
            n_events: f.n_events,
            log_likelihood: f.log_likelihood,
            aic: f.aic,
            bic: f.bic,
            delta_aic: f.aic - best_aic,
            delta_bic: f.bic - best_bic,
            aic_rank: 0,
            converged: f.converged,
        })
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| rows[i].aic.total_cmp(&rows[j].aic));
    for (rank, &i) in order.iter().enumerate() {
        rows[i].aic_rank = rank + 1;
    }
    let mut w = csv::Writer::from_writer(create(&a.out, run)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    run.summary = Some(json!({"best_aic": rows.iter().find(|r| r.aic_rank == 1).map(|r| r.variant)}));
    Ok(())
}

fn cmd_diagnose(a: &DiagnoseArgs, run: &mut Run) -> Result<()> {
    let stream = read_stream(&a.events)?;
    let params = read_params(&a.params)?;
    let res = diagnostics::residuals(&stream, &params)?;
    let mut w = csv::Writer::from_writer(create(&a.out, run)?);
    w.write_record(["process", "theoretical", "empirical"])?;
    let pooled = res.pooled();
    for (t, e) in diagnostics::qq_points(&pooled) {
        w.write_record(["all".to_string(), t.to_string(), e.to_string()])?;
    }
    for (k, r) in EventKind::ALL.iter().zip(&res.per_process) {
        for (t, e) in diagnostics::qq_points(r) {
            w.write_record([k.to_string(), t.to_string(), e.to_string()])?;
        }
    }
    w.flush()?;
    let per: serde_json::Map<String, serde_json::Value> = diagnostics::per_process_gof(&res, 1)
        .into_iter()
        .map(|(k, g)| (k.to_string(), serde_json::to_value(g).unwrap_or_default()))
        .collect();
    let summary = json!({
        "schema": "spread-hawkes/gof/v1",
        "pooled": if pooled.is_empty() { None } else { Some(GofSummary::of(&pooled)) },
        "per_process": per,
        "tails": res.tails,
    });
    let path = a.summary.clone().unwrap_or_else(|| sidecar(&a.out, "gof.json"));
    write_json(&path, &summary, run)?;
    run.summary = Some(summary);
    Ok(())
}

fn cmd_table1(a: &Table1Args, run: &mut Run) -> Result<()> {
    let mut cfg = RecoveryConfig::table1(a.row, a.paths, a.seed)?;
    cfg.n_events = a.n_events;
    cfg.fit.restarts = a.restarts;
    let res = recovery_experiment(&cfg)?;
    let mut w = csv::Writer::from_writer(create(&a.out, run)?);
    let mut head = vec!["row".to_string()];
    head.extend(res.names.iter().map(|n| n.to_string()));
    w.write_record(&head)?;
    let mut put = |label: String, vals: &[f64]| -> Result<()> {
        let mut r = vec![label];
        r.extend(vals.iter().map(|v| v.to_string()));
        w.write_record(&r)?;
        Ok(())
    };
    for (j, e) in res.estimates.iter().enumerate() {
        put(format!("path_{j}"), e)?;
    }
    put("truth".into(), &res.truth)?;
    put("mean".into(), &res.mean)?;
    put("std".into(), &res.std)?;
    if let (Some(m), Some(s)) = (table1_reference_mean(a.row), table1_reference_std(a.row)) {
        put("reference_mean".into(), &m)?;
        put("reference_std".into(), &s)?;
    }
    w.flush()?;
    let within: Option<bool> = table1_reference_std(a.row)
        .map(|s| res.mean.iter().zip(&res.truth).zip(s).all(|((m, t), s)| (m - t).abs() <= 3.0 * s));
    run.summary = Some(json!({"paths": a.paths, "converged": res.converged, "mean_within_3_reference_std": within}));
    Ok(())
}

fn cmd_convergence(a: &ConvergenceArgs, run: &mut Run) -> Result<()> {
    let mut cfg = ConvergenceConfig::new(a.beta, a.n_events, a.grid.clone(), a.replications, a.seed)?;
    cfg.threshold = a.threshold;
    cfg.optimizer = a.optimizer;
    let rows = convergence_experiment(&cfg)?;
    let mut w = csv::Writer::from_writer(create(&a.out, run)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    run.summary = Some(serde_json::to_value(&rows)?);
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    index: usize,
    source: String,
    alpha_bar: f64,
    alpha_bar_ma: f64,
    provision_mean: f64,
    depletion_mean: f64,
    liquidity_ratio: Option<f64>,
    liquidity_ratio_ma: Option<f64>,
    trace: f64,
    determinant: f64,
    stable: bool,
    steady_state_level: Option<f64>,
    steady_state_rate: Option<f64>,
}

/// Core parameters from fit CSV rows or fit-report JSONs, in input order.
pub fn load_fits(paths: &[PathBuf]) -> Result<Vec<(String, CoreParams)>> {
    let mut out = Vec::new();
    for p in paths {
        let is_json = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let ps = read_params(p)?;
            let core = ps.core().ok_or_else(|| {
                Error::InvalidParams(format!("{}: {} has no core parameters", p.display(), ps.variant()))
            })?;
            out.push((p.display().to_string(), core));
            continue;
        }
        let mut rdr = csv::Reader::from_path(p)?;
        let headers = rdr.headers()?.clone();
        let variant_col = headers.iter().position(|h| h == "variant");
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let variant: ModelVariant = match variant_col {
                Some(c) => rec[c].parse().map_err(|e: String| Error::Parse { line: i + 2, msg: e })?,
                None => ModelVariant::Proposed,
            };
            let vals: Vec<f64> = variant
                .param_names()
                .iter()
                .map(|n| {
                    let c = headers
                        .iter()
                        .position(|h| h == *n)
                        .ok_or_else(|| Error::Parse { line: 1, msg: format!("{}: missing column {n}", p.display()) })?;
                    rec[c].trim().parse::<f64>().map_err(|e| Error::Parse { line: i + 2, msg: format!("{n}: {e}") })
                })
                .collect::<Result<_>>()?;
            let ps = ParamSet::new(variant, vals)?;
            let core = ps.core().ok_or_else(|| Error::InvalidParams(format!("{variant} has no core parameters")))?;
            out.push((format!("{}:{}", p.display(), i), core));
        }
    }
    Ok(out)
}

fn cmd_analytics(a: &AnalyticsArgs, run: &mut Run) -> Result<()> {
    let fits = load_fits(&a.fits)?;
    let mut rows = Vec::with_capacity(fits.len());
    let mut abar = Vec::new();
    let mut ratios = Vec::new();
    for (i, (src, c)) in fits.iter().enumerate() {
        let ps = ParamSet::proposed(*c)?;
        let lr = diagnostics::liquidity_ratio(&ps)?;
        let st = diagnostics::stability_report(c);
        abar.push(diagnostics::alpha_bar(&ps)?);
        ratios.push(lr.ratio);
        rows.push(MetricsRow {
            index: i,
            source: src.clone(),
            alpha_bar: abar[i],
            alpha_bar_ma: 0.0,
            provision_mean: lr.provision_mean,
            depletion_mean: lr.depletion_mean,
            liquidity_ratio: lr.ratio,
            liquidity_ratio_ma: None,
            trace: st.trace,
            determinant: st.determinant,
            stable: st.stable,
            steady_state_level: st.steady_state_level,
            steady_state_rate: st.steady_state_rate,
        });
    }
    for (r, m) in rows.iter_mut().zip(diagnostics::moving_average(&abar, a.ma_window)) {
        r.alpha_bar_ma = m;
    }
    // undefined ratios break the average only where they fall inside the window
    if ratios.iter().all(Option::is_some) {
        let v: Vec<f64> = ratios.iter().map(|r| r.unwrap_or_default()).collect();
        for (r, m) in rows.iter_mut().zip(diagnostics::moving_average(&v, a.ma_window)) {
            r.liquidity_ratio_ma = Some(m);
        }
    } else {
        let w = a.ma_window.max(1);
        for i in 0..rows.len() {
            let lo = (i + 1).saturating_sub(w);
            let win = &ratios[lo..=i];
            rows[i].liquidity_ratio_ma =
                win.iter().copied().collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    let mut w = csv::Writer::from_writer(create(&a.out, run)?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    run.summary = Some(json!({"fits": rows.len()}));
    Ok(())
}
