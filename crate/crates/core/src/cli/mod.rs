//! Command-line front end.
//!
//! Exit status: 0 on success, 1 when a validation check or a run fails,
//! 2 on configuration errors.

mod config;
mod report;
mod suite;

pub use config::{
    emit_config, load_config, parse_config, ConfigDocument, EstimatorKind, EstimatorSection,
    LifetimeSection, McSection, MonomialEntry, ProblemSection, RunConfig, SigmaSection,
};
pub use report::{
    csv_rows, emit_csv, format_run, format_study, load_csv, read_csv, write_csv, CsvRow, CSV_HEADER,
};
pub use suite::{run_suite, Check};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::montecarlo::{run_estimate, run_study, THREADS_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "transport-mc",
    version,
    about = "Monte Carlo solver for first order transport PDEs"
)]
pub struct Cli {
    /// Worker threads (default: the environment variable, else all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single estimate at one point.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Evaluation point `t,x`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        at: Option<(f64, f64)>,
        /// Override the number of samples.
        #[arg(long)]
        samples: Option<u64>,
    },
    /// Repeated runs of the configured estimator over several sample levels.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        study: StudyArgs,
    },
    /// Paired study of several estimators on common random numbers.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        study: StudyArgs,
        /// Comma separated estimator names.
        #[arg(long, value_delimiter = ',', default_value = "unbiased,perturbed")]
        methods: Vec<String>,
    },
    /// Runs the self-check suite.
    Validate {
        /// Smaller sample budgets.
        #[arg(long)]
        quick: bool,
    },
    /// Prints the fully resolved configuration.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write plot data here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Comma separated sample levels.
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<u64>>,
    /// Runs per level.
    #[arg(long)]
    pub repeats: Option<usize>,
}

fn parse_point(s: &str) -> std::result::Result<(f64, f64), String> {
    let (t, x) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `t,x`, got `{s}`"))?;
    let t = t
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bad t `{t}`: {e}"))?;
    let x = x
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bad x `{x}`: {e}"))?;
    Ok((t, x))
}

fn load(common: &Common, threads: Option<usize>) -> Result<RunConfig> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.mc.master_seed = seed;
        cfg.canonical.mc.seed = Some(seed);
    }
    if threads.is_some() {
        cfg.mc.threads = threads;
    }
    cfg.mc.validate()?;
    Ok(cfg)
}

fn apply_study(cfg: &mut RunConfig, study: &StudyArgs) -> Result<()> {
    if let Some(levels) = &study.levels {
        cfg.mc.sample_levels = levels.clone();
    }
    if let Some(r) = study.repeats {
        cfg.mc.n_repeats = r;
    }
    cfg.mc.validate()?;
    if cfg.mc.sample_levels.is_empty() {
        return Err(Error::config("at least one sample level is needed"));
    }
    Ok(())
}

fn study(cfg: &RunConfig, kinds: &[EstimatorKind], csv: Option<&PathBuf>) -> Result<i32> {
    let estimators = kinds
        .iter()
        .map(|&k| cfg.estimator(k))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn Estimator> = estimators
        .iter()
        .map(|e| e.as_ref() as &dyn Estimator)
        .collect();
    let report = run_study(&refs, &cfg.mc, cfg.references())?;
    print!("{}", format_study(&report));
    if let Some(path) = csv {
        emit_csv(&report, path)?;
        println!("wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve {
            common,
            at,
            samples,
        } => {
            let mut cfg = load(&common, cli.threads)?;
            if let Some((t, x)) = at {
                cfg = cfg.at(t, x)?;
            }
            if let Some(n) = samples {
                cfg.mc.n_samples = n;
                cfg.mc.validate()?;
            }
            let est = cfg.estimator(cfg.kind)?;
            let report = run_estimate(est.as_ref(), &cfg.mc)?;
            let (t, x) = cfg.point;
            println!("point          ({t}, {x})");
            print!("{}", format_run(&report, cfg.references().true_value));
            if let Some(path) = &common.csv {
                let mut single = cfg.mc.clone();
                single.sample_levels = vec![single.n_samples];
                single.n_repeats = 1;
                let report = run_study(&[est.as_ref()], &single, cfg.references())?;
                emit_csv(&report, path)?;
            }
            Ok(EXIT_OK)
        }
        Command::Sweep {
            common,
            study: args,
        } => {
            let mut cfg = load(&common, cli.threads)?;
            apply_study(&mut cfg, &args)?;
            study(&cfg, &[cfg.kind], common.csv.as_ref())
        }
        Command::Compare {
            common,
            study: args,
            methods,
        } => {
            let mut cfg = load(&common, cli.threads)?;
            apply_study(&mut cfg, &args)?;
            let kinds = methods
                .iter()
                .map(|m| EstimatorKind::parse(m))
                .collect::<Result<Vec<_>>>()?;
            if kinds.is_empty() {
                return Err(Error::config("--methods needs at least one estimator"));
            }
            study(&cfg, &kinds, common.csv.as_ref())
        }
        Command::Validate { quick } => {
            if let Some(n) = cli.threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| Error::Run(e.to_string()))?;
            }
            let checks = run_suite(quick);
            let mut failures = 0;
            for c in &checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                failures += usize::from(!c.passed);
                println!("{tag}  {}  {}", c.name, c.detail);
            }
            println!("{} checks, {failures} failed", checks.len());
            Ok(if failures == 0 { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Config { common } => {
            let cfg = load(&common, cli.threads)?;
            print!("{}", emit_config(&cfg.canonical)?);
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` and runs the command, returning the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_configuration() {
                EXIT_CONFIG
            } else {
                EXIT_FAILURE
            }
        }
    }
}
