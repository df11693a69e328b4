//! `microreserve` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] microreserve::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if is_numerical(e) => 3,
            _ => 1,
        }
    }
}

fn is_numerical(e: &microreserve::Error) -> bool {
    use microreserve::Error;
    match e {
        Error::Replicate { source, .. } => is_numerical(source),
        Error::MajorantViolation { .. } => true,
        other => other.is_numerical(),
    }
}

/// Command outcome: a clean run or one that finished with unconverged fits.
pub enum Outcome {
    Success,
    PartialConvergence,
}

#[derive(Parser, Debug)]
#[command(
    name = "microreserve",
    version,
    about = "Fit, forecast and diagnose marked Poisson claims models"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalOpts {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the four model components and write a bundle.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo distribution of the total paid on (a, b].
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// End of the prediction window b, in days since the origin.
        #[arg(long)]
        until: f64,
        #[arg(long, default_value_t = microreserve::forecast::DEFAULT_SIMULATIONS)]
        sims: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Occurrence-time intensity and expected occurrence counts per bin.
    Backpredict {
        #[arg(long)]
        bundle: PathBuf,
        /// `lo:hi:width` in days, or `quarters` for calendar quarters up to the horizon.
        #[arg(long, default_value = "quarters")]
        bins: String,
        /// Spacing of the intensity grid in days.
        #[arg(long, default_value_t = 1.0)]
        grid_step: f64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// One draw of future claims and payments on (a, b], written as claims CSV.
    Simulate {
        #[arg(long)]
        bundle: PathBuf,
        /// Existing claims; without it only new claims are simulated.
        #[arg(long)]
        data: Option<PathBuf>,
        /// End of the window b, in days since the origin.
        #[arg(long)]
        window: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Intensity overlay, quarterly delay back-test and PIT independence tables.
    Diagnose {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        grid_step: f64,
        /// Extend the intensity overlay this many days past the horizon.
        #[arg(long, default_value_t = 0.0)]
        extend: f64,
        #[arg(long, default_value_t = 4)]
        max_payments: usize,
    },
    /// Generate a synthetic portfolio from a ground-truth spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also realize the total paid on (a, b] and write it to `--holdout-out`.
        #[arg(long, requires = "holdout_out")]
        until: Option<f64>,
        #[arg(long)]
        holdout_out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let seed = cli.global.seed;
    match cli.command {
        Command::Fit { config, data, out } => commands::fit(&config, &data, &out),
        Command::Predict {
            bundle,
            data,
            until,
            sims,
            out,
        } => commands::predict(&bundle, &data, until, sims, seed.unwrap_or(0), &out),
        Command::Backpredict {
            bundle,
            bins,
            grid_step,
            out,
        } => commands::backpredict(&bundle, &bins, grid_step, &out),
        Command::Simulate {
            bundle,
            data,
            window,
            out,
        } => commands::simulate(&bundle, data.as_deref(), window, seed.unwrap_or(0), &out),
        Command::Diagnose {
            bundle,
            data,
            out,
            grid_step,
            extend,
            max_payments,
        } => commands::diagnose(&bundle, &data, &out, grid_step, extend, max_payments),
        Command::Synth {
            spec,
            out,
            until,
            holdout_out,
        } => commands::synth(&spec, &out, seed, until.zip(holdout_out)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.global.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::PartialConvergence) => {
            eprintln!("warning: not every fit converged; see the `converged` flags in the bundle");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
