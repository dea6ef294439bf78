use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use blog::bayesfactor::{gbf_screen, screen_to_json, univariate_screen, write_reports_csv, BayesFactorError};
use blog::bglss::{run_gibbs, run_gibbs_with_draws, write_draws, write_summary_csv, GibbsConfig, GibbsError};
use blog::deltadesign::{build_multivariate_design, DesignError};
use blog::evalharness::{
    default_thresholds, init_thread_pool_from_env, run_multivariate_study, run_univariate_study,
    StudyError,
};
use blog::gprior::{GPriorSpec, GRule};
use blog::longdata::{load_long_csv, validate, ColumnConfig, DataError};
use blog::simgen::{export_replicate, simulate_replicate, JumpRule, Preset, SimError};

/// Bayesian variable selection for short-term longitudinal panels.
#[derive(Parser, Debug)]
#[command(name = "blog", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one replicate of a preset scenario.
    Simulate {
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        /// Evenly spaced target jumps instead of uniform draws.
        #[arg(long)]
        ramp: bool,
        /// Output directory for data.csv and truth.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Univariate g-prior Bayes-factor screen.
    Screen {
        #[command(flatten)]
        data: DataArgs,
        /// sqrtn, sure or fixed:VALUE.
        #[arg(long, default_value = "sqrtn")]
        g: GRule,
        /// `.json` for JSON, anything else for CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spike-and-slab group lasso on all features jointly.
    FitGroup {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write every retained draw to this binary file.
        #[arg(long)]
        draws: Option<PathBuf>,
        /// `.json` for JSON, anything else for CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicated univariate screening study.
    StudyUni {
        #[arg(long)]
        preset: Preset,
        #[arg(long, default_value = "sqrtn")]
        g: GRule,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        ramp: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replicated spike-and-slab group lasso study.
    StudyMulti {
        #[arg(long)]
        preset: Preset,
        /// Defaults to 20, or 100 with --full.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        ramp: bool,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Auxiliary Maruyama–George gBF screen.
    Gbf {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "subject")]
    subject: String,
    #[arg(long, default_value = "time")]
    time: String,
    #[arg(long, default_value = "response")]
    response: String,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
}

#[derive(Args, Debug)]
struct ChainArgs {
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    #[arg(long, default_value_t = 5_000)]
    burnin: usize,
    #[arg(long, default_value_t = 5)]
    mcem_rounds: usize,
    #[arg(long, default_value_t = 1_000)]
    mcem_iters: usize,
    /// Sample on the raw column scale.
    #[arg(long)]
    no_standardize: bool,
}

impl ChainArgs {
    fn config(&self, seed: u64) -> GibbsConfig {
        GibbsConfig {
            n_iter: self.iters,
            burn_in: self.burnin,
            seed,
            mcem_rounds: self.mcem_rounds,
            mcem_inner_iters: self.mcem_iters,
            standardize: !self.no_standardize,
            ..GibbsConfig::default()
        }
    }
}

/// Exit status 1: bad input; 2: numerical failure.
enum Failure {
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> Failure {
    Failure::Validation(e.to_string())
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        validation(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        validation(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        validation(e)
    }
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        match e {
            DesignError::SingularCovariance | DesignError::RankDeficientDesign => {
                Failure::Numerical(e.to_string())
            }
            _ => validation(e),
        }
    }
}

impl From<BayesFactorError> for Failure {
    fn from(e: BayesFactorError) -> Self {
        match e {
            BayesFactorError::Design(d) => d.into(),
            BayesFactorError::DegenerateDf { .. } => validation(e),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<GibbsError> for Failure {
    fn from(e: GibbsError) -> Self {
        match e {
            GibbsError::InvalidConfig(_) | GibbsError::DimensionMismatch(_) => validation(e),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::TooManyFailures { .. } => Failure::Numerical(e.to_string()),
            _ => validation(e),
        }
    }
}

fn load(args: &DataArgs) -> Result<blog::LongitudinalDataset, Failure> {
    if !args.delimiter.is_ascii() {
        return Err(validation("delimiter must be a single ASCII character"));
    }
    let cfg = ColumnConfig {
        subject: args.subject.clone(),
        time: args.time.clone(),
        response: args.response.clone(),
        delimiter: args.delimiter as u8,
    };
    let ds = load_long_csv(&args.data, &cfg)?;
    let report = validate(&ds);
    for &j in &report.constant_features {
        log::warn!("feature `{}` is constant over time", ds.feature_names()[j]);
    }
    for &j in &report.near_constant_features {
        log::warn!("feature `{}` is nearly constant over time", ds.feature_names()[j]);
    }
    Ok(ds)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn is_json(path: Option<&Path>) -> bool {
    path.and_then(Path::extension)
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> Result<(), Failure> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(validation)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn scenario(preset: Preset, seed: u64, ramp: bool) -> blog::SimScenario {
    blog::SimScenario {
        jump: if ramp { JumpRule::Ramp } else { JumpRule::Uniform },
        ..preset.scenario(seed)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            preset,
            seed,
            replicate,
            ramp,
            out,
        } => {
            let (ds, truth) = simulate_replicate(&scenario(preset, seed, ramp), replicate)?;
            let (data, truth_path) = export_replicate(&ds, &truth, &out)?;
            log::info!("wrote {} and {}", data.display(), truth_path.display());
        }
        Command::Screen { data, g, out } => {
            let ds = load(&data)?;
            let result = univariate_screen(&ds, &GPriorSpec::with_rule(g))?;
            for s in &result.skipped {
                log::warn!("skipped `{}`: {}", s.feature_name, s.reason);
            }
            if result.reports.is_empty() {
                let first = &result.skipped[0];
                return Err(Failure::Numerical(format!(
                    "no feature could be scored; `{}`: {}",
                    first.feature_name, first.reason
                )));
            }
            if is_json(out.as_deref()) {
                write_json(&screen_to_json(&result), out.as_deref())?;
            } else {
                write_reports_csv(&result.reports, output(out.as_deref())?).map_err(validation)?;
            }
        }
        Command::FitGroup {
            data,
            chain,
            seed,
            draws,
            out,
        } => {
            let ds = load(&data)?;
            let design = build_multivariate_design(&ds)?;
            let config = chain.config(seed);
            let summary = match &draws {
                Some(path) => {
                    let (summary, d) = run_gibbs_with_draws(&design, &config)?;
                    write_draws(&d, BufWriter::new(File::create(path)?))?;
                    summary
                }
                None => run_gibbs(&design, &config)?,
            };
            if is_json(out.as_deref()) {
                write_json(&summary, out.as_deref())?;
            } else {
                write_summary_csv(&summary, ds.feature_names(), output(out.as_deref())?)
                    .map_err(validation)?;
            }
        }
        Command::StudyUni {
            preset,
            g,
            reps,
            seed,
            ramp,
            out,
        } => {
            let result = run_univariate_study(
                &scenario(preset, seed, ramp),
                &GPriorSpec::with_rule(g),
                reps,
                &default_thresholds(),
            )?;
            write_json(&result, out.as_deref())?;
        }
        Command::StudyMulti {
            preset,
            reps,
            full,
            seed,
            ramp,
            chain,
            out,
        } => {
            let reps = reps.unwrap_or(if full { 100 } else { 20 });
            let result =
                run_multivariate_study(&scenario(preset, seed, ramp), &chain.config(seed), reps)?;
            write_json(&result, out.as_deref())?;
        }
        Command::Gbf { data, out } => {
            let ds = load(&data)?;
            write_json(&gbf_screen(&ds)?, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_thread_pool_from_env();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
