//! Command-line front end: `run`, `verify` and `sweep`.
//!
//! Exit codes: 0 success, 1 bad configuration or failed checks, 2 divergence.

pub mod config;

use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::ledger::{corollary_epoch_cost, epoch_cost};
use crate::problem::{CompositionProblem, ProblemConstants};
use crate::schedule::{Mode, Schedule, ScheduleError};
use crate::solver::{run_full_anchor, run_scscg, run_scscg_minibatch, RunOptions, RunResult, SolverError};
use crate::verify::{default_sizes, lemma_grid, EnumerationOptions, GridRow, Verdict};

pub use config::{Algorithm, ConfigError, ModeChoice, RunConfig};

/// Environment variable capping worker threads; `0` runs sequentially.
pub const THREADS_ENV: &str = "COMP_OPT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("iterate diverged at epoch {s}, inner step {k}")]
    Divergence { s: usize, k: usize },
    #[error("{0}")]
    Run(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Divergence { .. } => 2,
            _ => 1,
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Divergence { s, k } => CliError::Divergence { s, k },
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<ScheduleError> for CliError {
    fn from(e: ScheduleError) -> Self {
        CliError::Run(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "comp-opt", version, about = "Stochastically controlled compositional gradient methods")]
pub struct Cli {
    /// key=value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output CSV path (stdout when absent).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Record per-iteration rows.
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one algorithm and write its epoch trace.
    Run,
    /// Check the variance lemmas over a batch-size grid.
    Verify,
    /// Queries-to-epsilon over a grid of algorithms, n, epsilon and b.
    Sweep,
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                1
            } else {
                0
            }
        }
    }
}

pub fn execute(cli: &Cli) -> i32 {
    let result = load_config(cli).and_then(|config| match cli.command {
        Command::Run => cmd_run(&config),
        Command::Verify => cmd_verify(&config),
        Command::Sweep => cmd_sweep(&config),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    config.verbose |= cli.verbose;
    Ok(config)
}

/// Worker pool sized by [`THREADS_ENV`].
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
    let builder = rayon::ThreadPoolBuilder::new();
    let builder = match threads {
        Some(0) => builder.num_threads(1),
        Some(t) => builder.num_threads(t),
        None => builder,
    };
    builder.build().expect("thread pool")
}

/// A built problem, its effective constants and the resolved schedule.
pub struct Prepared {
    pub problem: Box<dyn CompositionProblem>,
    pub constants: ProblemConstants,
    pub schedule: Schedule,
    pub options: RunOptions,
}

fn starting_point(config: &RunConfig, dim: usize) -> Result<DVector<f64>, CliError> {
    match &config.x0 {
        Some(v) if v.len() == dim => Ok(DVector::from_vec(v.clone())),
        Some(v) => Err(CliError::Run(format!("x0 has {} entries, expected {dim}", v.len()))),
        None => Ok(DVector::zeros(dim)),
    }
}

pub fn resolve_mode(config: &RunConfig, constants: &ProblemConstants) -> Mode {
    match config.mode {
        ModeChoice::Convex => Mode::Convex,
        ModeChoice::Nonconvex => Mode::Nonconvex,
        ModeChoice::Auto if constants.mu.exact && constants.mu.value > 0.0 => Mode::Convex,
        ModeChoice::Auto => Mode::Nonconvex,
    }
}

pub fn default_epsilon(mode: Mode) -> f64 {
    match mode {
        Mode::Convex => 1e-4,
        Mode::Nonconvex => 1e-2,
    }
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, CliError> {
    let problem = config.problem.build().map_err(|e| CliError::Run(e.to_string()))?;
    let constants = config.effective_constants(problem.constants());
    let n = problem.n();
    let x0 = starting_point(config, problem.dim_x())?;
    let mode = resolve_mode(config, &constants);
    let epsilon = config.epsilon.unwrap_or_else(|| default_epsilon(mode));
    let mut schedule = match mode {
        Mode::Convex => {
            let gap = match (config.x0_gap, problem.optimum()) {
                (Some(g), _) => g,
                (None, Some(opt)) => (&x0 - &opt.x).norm_squared().max(f64::MIN_POSITIVE),
                (None, None) => {
                    return Err(CliError::Run("convex schedule needs x0_gap when the optimum is unknown".into()))
                }
            };
            Schedule::convex(&constants, n, epsilon, config.b, gap)?
        }
        Mode::Nonconvex => Schedule::nonconvex(&constants, n, epsilon, config.b, config.c_a, config.c_d, config.c_t)?,
    };
    schedule.apply_overrides(&config.overrides);
    schedule.validate()?;
    for w in &schedule.warnings {
        log::warn!("{w}");
    }
    let options = RunOptions { x0: Some(x0), record_iterations: config.verbose, sampling: config.sampling, ..Default::default() };
    Ok(Prepared { problem, constants, schedule, options })
}

pub fn run_algorithm(prep: &Prepared, algorithm: Algorithm, seed: u64) -> Result<RunResult, SolverError> {
    let p = prep.problem.as_ref();
    match algorithm {
        Algorithm::Scscg => run_scscg(p, &prep.schedule, &prep.options, seed),
        Algorithm::ScscgMinibatch => run_scscg_minibatch(p, &prep.schedule, &prep.options, seed),
        Algorithm::FullAnchor => run_full_anchor(p, &prep.schedule, &prep.options, seed),
    }
}

pub fn repetition_seed(config: &RunConfig, r: usize) -> u64 {
    if config.fixed_seed {
        config.master_seed
    } else {
        config.master_seed.wrapping_add(r as u64)
    }
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e16)`.
pub fn fmt_f64(x: f64) -> String {
    let m = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e16).contains(&m) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn opt_field(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn header_lines(config: &RunConfig, prep: &Prepared, seed: u64) -> String {
    let mut out = String::new();
    out.push_str("# comp-opt run trace\n");
    for (k, v) in config.echo() {
        out.push_str(&format!("# {k}={v}\n"));
    }
    let s = &prep.schedule;
    let pv = &s.provenance;
    out.push_str(&format!("# schedule.mode={}\n", s.mode));
    out.push_str(&format!("# schedule.epsilon={}\n", fmt_f64(s.epsilon)));
    out.push_str(&format!("# schedule.a={} ({})\n", s.a, pv.a.as_str()));
    out.push_str(&format!("# schedule.d={} ({})\n", s.d, pv.d.as_str()));
    out.push_str(&format!("# schedule.k={} ({})\n", s.k, pv.k.as_str()));
    out.push_str(&format!("# schedule.s={} ({})\n", s.s, pv.s.as_str()));
    out.push_str(&format!("# schedule.b={} ({})\n", s.b, pv.b.as_str()));
    out.push_str(&format!("# schedule.eta={} ({})\n", fmt_f64(s.eta), pv.eta.as_str()));
    out.push_str(&format!("# schedule.h={} ({})\n", fmt_f64(s.h), pv.h.as_str()));
    if let Some(t) = s.t {
        out.push_str(&format!("# schedule.t={t}\n"));
    }
    for (name, c) in prep.constants.entries() {
        let tag = if c.exact { "exact" } else { "estimated" };
        out.push_str(&format!("# constant.{name}={} ({tag})\n", fmt_f64(c.value)));
    }
    for note in &s.notes {
        out.push_str(&format!("# note: {note}\n"));
    }
    for w in &s.warnings {
        out.push_str(&format!("# warning: {w}\n"));
    }
    out.push_str(&format!("# run_seed={seed}\n"));
    out
}

/// Trace CSV: `#` header echoing every parameter, then one row per epoch.
pub fn render_trace_csv(config: &RunConfig, prep: &Prepared, seed: u64, result: &RunResult) -> String {
    let mut out = header_lines(config, prep, seed);
    let init = &result.trace.initial;
    out.push_str(&format!(
        "# initial: f_value={} grad_norm_sq={} dist_sq_opt={}\n",
        fmt_f64(init.f_value),
        fmt_f64(init.grad_norm_sq),
        opt_field(init.dist_sq_opt)
    ));
    out.push_str(&format!("# selected: s={} k={}\n", result.selected.0, result.selected.1));
    out.push_str("s,f_value,grad_norm_sq,dist_sq_opt,paper_queries,paper_queries_corollary,raw_queries\n");
    for r in &result.trace.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.s,
            fmt_f64(r.f_value),
            fmt_f64(r.grad_norm_sq),
            opt_field(r.dist_sq_opt),
            r.paper_queries,
            r.corollary_queries,
            r.raw_queries
        ));
    }
    out
}

pub fn render_iterations_csv(result: &RunResult) -> String {
    let mut out = String::from("s,k,f_value,grad_norm_sq\n");
    for r in &result.trace.iterations {
        out.push_str(&format!("{},{},{},{}\n", r.s, r.k, fmt_f64(r.f_value), fmt_f64(r.grad_norm_sq)));
    }
    out
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io_err = |source| CliError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

/// `<stem>.<tag>.<ext>` next to `path`.
pub fn sibling(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into());
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(path) => write_atomic(path, contents),
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(contents.as_bytes())
                .map_err(|source| CliError::Io { path: PathBuf::from("<stdout>"), source })
        }
    }
}

pub fn cmd_run(config: &RunConfig) -> Result<i32, CliError> {
    let prep = prepare(config)?;
    let reps = config.repetitions;
    let results: Vec<(u64, Result<RunResult, SolverError>)> = thread_pool().install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let seed = repetition_seed(config, r);
                (seed, run_algorithm(&prep, config.algorithm, seed))
            })
            .collect()
    });
    let base = match (&config.out, reps) {
        (Some(p), _) => Some(p.clone()),
        (None, 1) => None,
        (None, _) => Some(PathBuf::from("trace.csv")),
    };
    let mut failure = None;
    for (r, (seed, result)) in results.into_iter().enumerate() {
        let path = base.as_ref().map(|b| if reps == 1 { b.clone() } else { sibling(b, &format!("rep{r}")) });
        match result {
            Ok(result) => {
                emit(path.as_deref(), &render_trace_csv(config, &prep, seed, &result))?;
                if config.verbose {
                    match &path {
                        Some(p) => write_atomic(&sibling(p, "iterations"), &render_iterations_csv(&result))?,
                        None => log::warn!("per-iteration rows need --out; skipped"),
                    }
                }
            }
            Err(e) => {
                let e = CliError::from(e);
                eprintln!("repetition {r}: {e}");
                failure.get_or_insert(e);
            }
        }
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(0),
    }
}

pub struct VerifyOutput {
    pub rows: Vec<GridRow>,
    pub x_k: DVector<f64>,
    pub x_tilde: DVector<f64>,
}

/// Grid rows for the configured problem and points.
pub fn verify_rows(config: &RunConfig) -> Result<VerifyOutput, CliError> {
    let problem = config.problem.build().map_err(|e| CliError::Run(e.to_string()))?;
    let constants = config.effective_constants(problem.constants());
    let n = problem.n();
    let dim = problem.dim_x();
    let point = |v: &Option<Vec<f64>>, fill: f64, name: &str| -> Result<DVector<f64>, CliError> {
        match v {
            Some(v) if v.len() == dim => Ok(DVector::from_vec(v.clone())),
            Some(v) => Err(CliError::Run(format!("{name} has {} entries, expected {dim}", v.len()))),
            None => Ok(DVector::from_element(dim, fill)),
        }
    };
    let x_k = point(&config.verify_x, 1.0, "verify_x")?;
    let x_tilde = point(&config.verify_x_tilde, 0.0, "verify_x_tilde")?;
    let sizes = default_sizes(n);
    let a_values = config.grid_a.clone().unwrap_or_else(|| sizes.clone());
    let d_values = config.grid_d.clone().unwrap_or_else(|| sizes.clone());
    let b_values = config.grid_b.clone().unwrap_or_else(|| sizes.clone());
    let options =
        EnumerationOptions { guard: config.enumeration_guard, mc_samples: config.mc_samples, seed: config.master_seed };
    let cells: Vec<(usize, usize)> = a_values.iter().flat_map(|&a| d_values.iter().map(move |&d| (a, d))).collect();
    let chunks: Result<Vec<Vec<GridRow>>, _> = thread_pool().install(|| {
        cells
            .par_iter()
            .map(|&(a, d)| {
                lemma_grid(problem.as_ref(), &constants, &x_k, &x_tilde, &[a], &[d], &b_values, config.sampling, options)
            })
            .collect()
    });
    let rows = chunks.map_err(|e| CliError::Run(e.to_string()))?.into_iter().flatten().collect();
    Ok(VerifyOutput { rows, x_k, x_tilde })
}

pub fn render_verify_csv(config: &RunConfig, x_k: &DVector<f64>, x_tilde: &DVector<f64>, rows: &[GridRow]) -> String {
    let vec_str = |v: &DVector<f64>| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
    let mut out = String::from("# comp-opt lemma verification\n");
    for (k, v) in config.echo() {
        out.push_str(&format!("# {k}={v}\n"));
    }
    out.push_str(&format!("# x_k={}\n# x_tilde={}\n", vec_str(x_k), vec_str(x_tilde)));
    out.push_str("lemma,a,d,b,method,empirical,bound,exact,closed_form,sigma,samples,verdict\n");
    for row in rows {
        let r = &row.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.lemma.as_str(),
            row.a,
            row.d,
            row.b,
            r.method.as_str(),
            fmt_f64(r.empirical),
            fmt_f64(r.bound),
            opt_field(r.exact),
            opt_field(r.closed_form),
            fmt_f64(r.sigma),
            r.samples,
            r.verdict
        ));
    }
    out
}

pub fn cmd_verify(config: &RunConfig) -> Result<i32, CliError> {
    let VerifyOutput { rows, x_k, x_tilde } = verify_rows(config)?;
    emit(config.out.as_deref(), &render_verify_csv(config, &x_k, &x_tilde, &rows))?;
    let failed = rows.iter().filter(|r| r.report.verdict == Verdict::Fail).count();
    for row in rows.iter().filter(|r| r.report.verdict == Verdict::Fail) {
        eprintln!(
            "fail: {} at A={} D={} b={}: {} > {}",
            row.lemma.as_str(),
            row.a,
            row.d,
            row.b,
            row.report.empirical,
            row.report.bound
        );
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

/// One sweep cell summarized over repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub algorithm: Algorithm,
    pub n: usize,
    pub epsilon: f64,
    pub b: usize,
    pub schedule: Option<Schedule>,
    pub repetitions: usize,
    pub reached: usize,
    pub censored: usize,
    /// Median paper-convention queries to target; censored runs count as the budget.
    pub median_queries: f64,
    pub median_queries_corollary: f64,
    pub budget: u64,
    pub error: Option<String>,
}

/// Paper queries and corollary queries at the first record meeting `epsilon`,
/// or `None` when the run never does.
pub fn queries_to_target(result: &RunResult, mode: Mode, epsilon: f64) -> Option<(u64, u64)> {
    result
        .trace
        .all_records()
        .find(|r| {
            let metric = match (mode, r.dist_sq_opt) {
                (Mode::Convex, Some(d)) => d,
                _ => r.grad_norm_sq,
            };
            metric <= epsilon
        })
        .map(|r| (r.paper_queries, r.corollary_queries))
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len();
    if m == 0 {
        f64::NAN
    } else if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

pub fn sweep(config: &RunConfig) -> Result<Vec<SweepCell>, CliError> {
    let algorithms = config.sweep_algorithms.clone().unwrap_or_else(|| vec![config.algorithm]);
    let ns = config.sweep_n.clone().unwrap_or_else(|| vec![config.problem.n]);
    let epsilons = config.sweep_epsilon.clone().unwrap_or_else(|| vec![config.epsilon.unwrap_or(f64::NAN)]);
    let bs = config.sweep_b.clone().unwrap_or_else(|| vec![config.b]);
    let mut cells = Vec::new();
    for &alg in &algorithms {
        for &n in &ns {
            for &eps in &epsilons {
                for &b in &bs {
                    if alg == Algorithm::Scscg && b != 1 {
                        return Err(ConfigError { line: 0, message: "sweep: scscg uses b = 1".into() }.into());
                    }
                    cells.push((alg, n, eps, b));
                }
            }
        }
    }
    if cells.is_empty() {
        return Err(ConfigError { line: 0, message: "sweep grid is empty".into() }.into());
    }
    let reps = config.repetitions;
    thread_pool().install(|| {
        cells
            .par_iter()
            .map(|&(alg, n, eps, b)| {
                let mut cfg = config.clone();
                cfg.algorithm = alg;
                cfg.problem.n = n;
                cfg.epsilon = if eps.is_nan() { None } else { Some(eps) };
                cfg.b = b;
                cfg.verbose = false;
                Ok(sweep_cell(&cfg, reps))
            })
            .collect()
    })
}

fn sweep_cell(cfg: &RunConfig, reps: usize) -> SweepCell {
    let mut cell = SweepCell {
        algorithm: cfg.algorithm,
        n: cfg.problem.n,
        epsilon: cfg.epsilon.unwrap_or(f64::NAN),
        b: cfg.b,
        schedule: None,
        repetitions: reps,
        reached: 0,
        censored: 0,
        median_queries: f64::NAN,
        median_queries_corollary: f64::NAN,
        budget: 0,
        error: None,
    };
    let prep = match prepare(cfg) {
        Ok(p) => p,
        Err(e) => {
            cell.error = Some(e.to_string());
            return cell;
        }
    };
    let s = &prep.schedule;
    let epsilon = s.epsilon.max(cfg.epsilon.unwrap_or(0.0));
    cell.epsilon = epsilon;
    cell.budget = s.s as u64 * epoch_cost(s.d, s.k, s.a, s.b);
    let budget_corollary = s.s as u64 * corollary_epoch_cost(s.d, s.k, s.a);
    let mut q = Vec::with_capacity(reps);
    let mut qc = Vec::with_capacity(reps);
    for r in 0..reps {
        let hit = run_algorithm(&prep, cfg.algorithm, repetition_seed(cfg, r))
            .ok()
            .and_then(|res| queries_to_target(&res, s.mode, epsilon));
        match hit {
            Some((p, c)) => {
                cell.reached += 1;
                q.push(p as f64);
                qc.push(c as f64);
            }
            None => {
                cell.censored += 1;
                q.push(cell.budget as f64);
                qc.push(budget_corollary as f64);
            }
        }
    }
    cell.median_queries = median(&mut q);
    cell.median_queries_corollary = median(&mut qc);
    cell.schedule = Some(prep.schedule);
    cell
}

pub fn render_sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(
        "algorithm,n,epsilon,b,a,d,k,s,repetitions,reached,censored,median_queries,median_queries_corollary,budget,error\n",
    );
    for c in cells {
        let (a, d, k, s) = c.schedule.as_ref().map(|s| (s.a, s.d, s.k, s.s)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.algorithm,
            c.n,
            fmt_f64(c.epsilon),
            c.b,
            a,
            d,
            k,
            s,
            c.repetitions,
            c.reached,
            c.censored,
            fmt_f64(c.median_queries),
            fmt_f64(c.median_queries_corollary),
            c.budget,
            c.error.as_deref().unwrap_or("").replace(',', ";")
        ));
    }
    out
}

pub fn cmd_sweep(config: &RunConfig) -> Result<i32, CliError> {
    let cells = sweep(config)?;
    emit(config.out.as_deref(), &render_sweep_csv(&cells))?;
    Ok(if cells.iter().any(|c| c.error.is_some()) { 1 } else { 0 })
}
