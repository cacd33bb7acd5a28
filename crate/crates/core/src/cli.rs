//! Command-line front end: `fit`, `select`, `outliers` and `simulate`.
//!
//! Exit codes: 0 on success, 2 on usage errors (bad flags, unreadable input,
//! invalid settings), 1 when fitting or simulation fails. Failures write a
//! JSON object `{"schema": "wce/1", "error": {"kind", "message"}}`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::error::{Result, WceError};
use crate::inference::{sandwich_covariance, SandwichEstimate};
use crate::io::read_table_path;
use crate::select::select_model;
use crate::simbench::{run_study_with_points, MethodConfig, Scenario, DEFAULT_MC_POINTS};
use crate::wce::{run_eee, Dataset, Family, FitConfig, FitResult, DEFAULT_SEED};

pub const SCHEMA: &str = "wce/1";

/// Environment variable overriding the default worker-thread count.
pub const THREADS_ENV: &str = "WCE_NUM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "wce", version, about = "Robust mixture modelling with density-weighted complete estimating equations")]
struct Cli {
    /// Worker threads (default: $WCE_NUM_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one mixture and report parameters, clusters and outliers.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
        /// Number of components.
        #[arg(long)]
        k: usize,
        /// Robustness exponent.
        #[arg(long, default_value_t = 0.2)]
        gamma: f64,
        /// Also report sandwich standard errors.
        #[arg(long)]
        se: bool,
    },
    /// Choose the number of components and gamma by the trimmed BIC.
    Select {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
        /// Candidate numbers of components, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        k_grid: Vec<usize>,
        /// Candidate robustness exponents, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.2")]
        gamma_grid: Vec<f64>,
    },
    /// Fit and list the observations flagged as outliers.
    Outliers {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tuning: TuningArgs,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.2)]
        gamma: f64,
    },
    /// Run a simulation study and write one CSV row per replication and method.
    Simulate {
        #[arg(long, value_enum)]
        scenario: ScenarioKind,
        /// Cluster separation.
        #[arg(long)]
        xi: f64,
        /// Contamination fraction.
        #[arg(long, default_value_t = 0.0)]
        omega: f64,
        #[arg(long, default_value_t = 2)]
        p: usize,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Exponents to compare; 0 is classical EM.
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.3")]
        gammas: Vec<f64>,
        /// Components fitted (default: the true number).
        #[arg(long)]
        k: Option<usize>,
        /// Uniform points for the integrated squared error.
        #[arg(long, default_value_t = DEFAULT_MC_POINTS)]
        mc_points: usize,
        #[command(flatten)]
        tuning: TuningArgs,
        /// CSV report path (default: stdout).
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Optional JSON path for per-method means and standard errors.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScenarioKind {
    Gaussian,
    #[value(alias = "snm", alias = "skew_normal")]
    SkewNormal,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long, short)]
    input: PathBuf,
    /// Model family: gmm, moe or snm.
    #[arg(long, value_parser = parse_family)]
    model: Family,
    /// Response column (mixtures of experts only).
    #[arg(long)]
    response: Option<String>,
    /// Output JSON path (default: stdout).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuningArgs {
    /// Outlier threshold probability.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Bound on the covariance eigenvalue ratio.
    #[arg(long, default_value_t = 10.0)]
    eigen_ratio: f64,
    /// Disable the eigenvalue-ratio constraint.
    #[arg(long)]
    no_eigen_ratio: bool,
    /// Random starts.
    #[arg(long, default_value_t = 10)]
    starts: usize,
    #[arg(long, default_value_t = 1000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Seed for every random choice.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Monte Carlo draws for non-Gaussian outlier scores.
    #[arg(long, default_value_t = 10_000)]
    mc_draws: usize,
}

impl TuningArgs {
    fn config(&self, gamma: f64) -> FitConfig {
        FitConfig {
            gamma,
            max_iter: self.max_iter,
            tol: self.tol,
            n_starts: self.starts,
            eigen_ratio_c: (!self.no_eigen_ratio).then_some(self.eigen_ratio),
            seed: self.seed,
            alpha: self.alpha,
            mc_draws: self.mc_draws,
        }
    }
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: WceError| e.to_string())
}

/// Failure of a command, carrying its exit code.
enum Failure {
    Usage(String),
    Run(WceError),
}

impl From<WceError> for Failure {
    fn from(e: WceError) -> Self {
        Failure::Run(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let output = match &cli.command {
        Command::Fit { data, .. } | Command::Select { data, .. } | Command::Outliers { data, .. } => data.output.clone(),
        Command::Simulate { .. } => None,
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(msg) => return report_usage(&msg),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return report_failure(&WceError::InvalidConfig(e.to_string()), output.as_deref()),
    };
    match pool.install(|| execute(cli.command, threads)) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => report_usage(&msg),
        Err(Failure::Run(e)) => report_failure(&e, output.as_deref()),
    }
}

fn thread_count(flag: Option<usize>) -> std::result::Result<usize, String> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| format!("{THREADS_ENV} must be a positive integer, got {v:?}"))?,
            Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        },
    };
    if n == 0 {
        return Err("thread count must be positive".into());
    }
    Ok(n)
}

fn report_usage(msg: &str) -> i32 {
    eprintln!("error: {msg}\n");
    eprintln!("{}", Cli::command().render_usage());
    2
}

fn report_failure(e: &WceError, output: Option<&Path>) -> i32 {
    let doc = json!({
        "schema": SCHEMA,
        "error": { "kind": e.kind(), "message": e.to_string() },
    });
    let text = serde_json::to_string_pretty(&doc).unwrap_or_default();
    if let Some(path) = output {
        if let Err(io) = std::fs::write(path, &text) {
            log::warn!("could not write error report to {}: {io}", path.display());
        }
    }
    println!("{text}");
    eprintln!("error: {e}");
    1
}

fn execute(command: Command, threads: usize) -> std::result::Result<(), Failure> {
    match command {
        Command::Fit { data, tuning, k, gamma, se } => {
            let (dataset, columns) = load(&data)?;
            let cfg = checked_config(&tuning, gamma, &[k])?;
            let fit = run_eee(data.model, &dataset, k, &cfg)?;
            let se = if se { Some(sandwich_covariance(&fit, &dataset)?) } else { None };
            let mut doc = fit_json(&fit, data.model, k, &cfg, &columns, se.as_ref());
            doc["command"] = json!("fit");
            write_json(&doc, data.output.as_deref())
        }
        Command::Select { data, tuning, k_grid, gamma_grid } => {
            let (dataset, columns) = load(&data)?;
            if gamma_grid.is_empty() {
                return Err(usage("--gamma-grid must not be empty"));
            }
            for &g in &gamma_grid {
                checked_config(&tuning, g, &k_grid)?;
            }
            let cfg = tuning.config(gamma_grid[0]);
            let sel = select_model(&dataset, data.model, &k_grid, &gamma_grid, &cfg)?;
            let best_cfg = FitConfig { gamma: sel.best_gamma, ..cfg };
            let doc = json!({
                "schema": SCHEMA,
                "command": "select",
                "best_k": sel.best_k,
                "best_gamma": sel.best_gamma,
                "per_gamma": sel.per_gamma,
                "table": sel.table,
                "fit": fit_json(&sel.fit, data.model, sel.best_k, &best_cfg, &columns, None),
            });
            write_json(&doc, data.output.as_deref())
        }
        Command::Outliers { data, tuning, k, gamma } => {
            let (dataset, columns) = load(&data)?;
            let cfg = checked_config(&tuning, gamma, &[k])?;
            let fit = run_eee(data.model, &dataset, k, &cfg)?;
            let indices: Vec<usize> = fit.outlier_flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect();
            let doc = json!({
                "schema": SCHEMA,
                "command": "outliers",
                "alpha": cfg.alpha,
                "n_outliers": indices.len(),
                "outlier_indices": indices,
                "outlier_scores": fit.outlier_scores,
                "outlier_flags": fit.outlier_flags,
                "labels": fit.labels,
                "fit": fit_json(&fit, data.model, k, &cfg, &columns, None),
            });
            write_json(&doc, data.output.as_deref())
        }
        Command::Simulate { scenario, xi, omega, p, n, reps, gammas, k, mc_points, tuning, output, summary } => {
            let scn = match scenario {
                ScenarioKind::Gaussian => Scenario::gaussian(xi, omega, p, n, tuning.seed),
                ScenarioKind::SkewNormal => Scenario::skew_normal(xi, omega, p, n, tuning.seed),
            }
            .map_err(|e| usage(e.to_string()))?;
            if gammas.is_empty() || reps == 0 || mc_points == 0 {
                return Err(usage("--gammas, --reps and --mc-points must be nonempty / positive"));
            }
            let k = k.unwrap_or_else(|| scn.true_params.n_components());
            let family = scn.family;
            let methods = gammas
                .iter()
                .map(|&g| {
                    let cfg = checked_config(&tuning, g, &[k])?;
                    let name = if g == 0.0 { "em".to_string() } else { format!("wce_gamma_{g}") };
                    Ok(MethodConfig::new(name, family, k, cfg))
                })
                .collect::<std::result::Result<Vec<_>, Failure>>()?;
            let report = run_study_with_points(&scn, &methods, reps, threads, mc_points)?;
            match &output {
                Some(path) => report.write_csv(create(path)?)?,
                None => report.write_csv(std::io::stdout().lock())?,
            }
            if let Some(path) = summary {
                write_json(&report.summary_json(), Some(&path))?;
            }
            Ok(())
        }
    }
}

fn checked_config(tuning: &TuningArgs, gamma: f64, ks: &[usize]) -> std::result::Result<FitConfig, Failure> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(usage("numbers of components must be positive"));
    }
    let cfg = tuning.config(gamma);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load(args: &DataArgs) -> std::result::Result<(Dataset, Vec<String>), Failure> {
    if !args.input.is_file() {
        return Err(usage(format!("input file {} does not exist", args.input.display())));
    }
    let table = read_table_path(&args.input)?;
    match (args.model, &args.response) {
        (Family::Experts, Some(col)) => {
            let (data, names) = table.into_regression(col).map_err(|e| match e {
                WceError::InvalidConfig(m) => usage(m),
                other => Failure::Run(other),
            })?;
            Ok((Dataset::Regression(data), names))
        }
        (Family::Experts, None) => Err(usage("--response is required for mixtures of experts")),
        (_, Some(_)) => Err(usage("--response applies only to mixtures of experts")),
        (_, None) => Ok((Dataset::Points(table.values), table.columns)),
    }
}

/// JSON document of a fit: parameters, memberships, outliers and settings.
pub fn fit_json(fit: &FitResult, family: Family, k: usize, cfg: &FitConfig, columns: &[String], se: Option<&SandwichEstimate>) -> Value {
    let responsibilities: Vec<Vec<f64>> = fit.responsibilities.row_iter().map(|r| r.iter().copied().collect()).collect();
    json!({
        "schema": SCHEMA,
        "family": family,
        "k": k,
        "columns": columns,
        "config": cfg,
        "params": fit.params,
        "labels": fit.labels,
        "responsibilities": responsibilities,
        "outlier_scores": fit.outlier_scores,
        "outlier_flags": fit.outlier_flags,
        "n_outliers": fit.outlier_flags.iter().filter(|f| **f).count(),
        "trimmed_bic": fit.trimmed_bic,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "start_index": fit.start_index,
        "failed_starts": fit.failed_starts,
        "standard_errors": se,
    })
}

fn create(path: &Path) -> Result<std::fs::File> {
    Ok(std::fs::File::create(path)?)
}

fn write_json(doc: &Value, path: Option<&Path>) -> std::result::Result<(), Failure> {
    let text = serde_json::to_string_pretty(doc).map_err(WceError::from)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(WceError::from)?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(WceError::from)?;
        }
    }
    Ok(())
}
