mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dataenrich::solver::UpdateOrder;

use config::RunConfig;

const AFTER_HELP: &str = "\
Environment:
  DATAENRICH_OUT_ROOT  Root for default output directories (default: ./runs).
                       Without --out, a subcommand writes to $DATAENRICH_OUT_ROOT/<subcommand>.

Exit status:
  0  success
  1  usage, configuration or I/O error
  2  numerical failure (non-finite values, divergence)
On failure the first line on stderr is `error[<kind>] <message>`.";

#[derive(Parser, Debug)]
#[command(name = "dataenrich", version, about = "Fit and study data-enriched linear models", after_help = AFTER_HELP)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; unknown keys are rejected. Flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset directory with its ground truth.
    Generate {
        /// fig_a, fig_b, fig_c or fig_d; otherwise `synthesis` from the config is used.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Fit a dataset directory and write params.csv, trace.csv and meta.json.
    Fit {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverFlags,
        /// JSON list of G+1 constraints, e.g. [{"kind":"l1_ball","radius":5}].
        #[arg(long, value_name = "PATH")]
        constraints: Option<PathBuf>,
    },
    /// Average error traces over independent synthetic runs.
    Experiment {
        /// Preset name; otherwise `synthesis` from the config is used.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[command(flatten)]
        solver: SolverFlags,
    },
    /// Monte-Carlo probes of the cone geometry.
    Diagnose {
        /// Dataset directory with params.csv; required unless --widths is given.
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// Only estimate Gaussian widths (of the full space of --dim without --data).
        #[arg(long)]
        widths: bool,
        #[arg(long, value_name = "P")]
        dim: Option<usize>,
        /// Gaussian draws for widths and trials for the RE and DEIC probes.
        #[arg(long)]
        trials: Option<usize>,
        /// Sampled directions per contraction estimate.
        #[arg(long)]
        directions: Option<usize>,
    },
    /// K-fold cross-validation over a two-scale radius grid.
    Cv {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Multipliers of the shared radius, comma separated.
        #[arg(long, value_delimiter = ',')]
        shared: Option<Vec<f64>>,
        /// Multipliers of the individual radii, comma separated.
        #[arg(long, value_delimiter = ',')]
        individual: Option<Vec<f64>>,
        #[command(flatten)]
        solver: SolverFlags,
    },
}

#[derive(Args, Debug)]
struct SolverFlags {
    /// Update sweeps.
    #[arg(long)]
    iters: Option<usize>,
    /// Early-stop tolerance on the relative parameter change (0 disables).
    #[arg(long)]
    stop_tol: Option<f64>,
    /// Block update order [default: gauss-seidel].
    #[arg(long, value_enum)]
    order: Option<Order>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Order {
    Jacobi,
    GaussSeidel,
}

impl SolverFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.iters {
            cfg.fit.max_iters = Some(v);
        }
        if let Some(v) = self.stop_tol {
            cfg.fit.stop_tol = Some(v);
        }
        if let Some(o) = self.order {
            cfg.fit.update_order = Some(match o {
                Order::Jacobi => UpdateOrder::Jacobi,
                Order::GaussSeidel => UpdateOrder::GaussSeidel,
            });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Config,
    Io,
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Usage, msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Config, msg: msg.into() }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Numerical, msg: msg.into() }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Numerical => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Usage => "usage",
            ErrorKind::Config => "config",
            ErrorKind::Io => "io",
            ErrorKind::Numerical => "numerical",
        };
        write!(f, "error[{kind}] {}", self.msg.replace('\n', " "))
    }
}

impl From<dataenrich::Error> for CliError {
    fn from(e: dataenrich::Error) -> Self {
        use dataenrich::Error as E;
        let kind = match &e {
            _ if e.is_numerical() => ErrorKind::Numerical,
            E::Io(_) | E::Csv(_) | E::Parse { .. } => ErrorKind::Io,
            _ => ErrorKind::Config,
        };
        Self { kind, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { kind: ErrorKind::Io, msg: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self { kind: ErrorKind::Config, msg: e.to_string() }
    }
}

fn build_config(cli: Cli) -> Result<(RunConfig, Command), CliError> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let c = cli.common;
    cfg.seed = c.seed.or(cfg.seed);
    cfg.out = c.out.or(cfg.out);
    cfg.threads = c.threads.or(cfg.threads);
    match &cli.command {
        Command::Generate { preset } => {
            if preset.is_some() {
                cfg.preset = preset.clone();
            }
        }
        Command::Fit { data, solver, constraints } => {
            if data.is_some() {
                cfg.data = data.clone();
            }
            solver.apply(&mut cfg);
            if let Some(p) = constraints {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                cfg.fit.constraints =
                    Some(serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?);
            }
        }
        Command::Experiment { name, reps, solver } => {
            if name.is_some() {
                cfg.preset = name.clone();
            }
            cfg.experiment.reps = reps.or(cfg.experiment.reps);
            solver.apply(&mut cfg);
        }
        Command::Diagnose { data, widths, dim, trials, directions } => {
            if data.is_some() {
                cfg.data = data.clone();
            }
            let d = &mut cfg.diagnostics;
            d.widths_only |= *widths;
            d.dim = dim.or(d.dim);
            if let Some(t) = trials {
                d.width_gaussians = Some(*t);
                d.re_trials = Some(*t);
                d.deic_trials = Some(*t);
            }
            d.contraction_directions = directions.or(d.contraction_directions);
        }
        Command::Cv { data, k, shared, individual, solver } => {
            if data.is_some() {
                cfg.data = data.clone();
            }
            cfg.cv.folds = k.or(cfg.cv.folds);
            if shared.is_some() || individual.is_some() {
                cfg.cv.grid = None;
            }
            cfg.cv.shared = shared.clone().or(cfg.cv.shared.take());
            cfg.cv.individual = individual.clone().or(cfg.cv.individual.take());
            solver.apply(&mut cfg);
        }
    }
    Ok((cfg, cli.command))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (cfg, command) = build_config(cli)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::config(e.to_string()))?;
    }
    match command {
        Command::Generate { .. } => commands::generate(&cfg),
        Command::Fit { .. } => commands::fit(&cfg),
        Command::Experiment { .. } => commands::experiment(&cfg),
        Command::Diagnose { .. } => commands::diagnose(&cfg),
        Command::Cv { .. } => commands::cv(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::usage(first));
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
