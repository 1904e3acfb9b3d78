use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Identification, control and counterfactual evaluation of airport
/// landside diversion messages.
#[derive(Parser, Debug)]
#[command(name = "landside", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Global seed; overrides the config file's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Worker threads for scenario evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic campaign: dataset CSV, true model, episode log.
    Synth {
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Fit the model, report validation errors and calibrate noise bounds.
    Train {
        /// Measurement CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        rho: Option<f64>,
    },
    /// One receding-horizon run from a state in the dataset.
    Control {
        #[arg(long)]
        model: PathBuf,
        /// Noise model JSON; noise-free plant when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Timestamp of the starting bin (ISO-8601, UTC).
        #[arg(long)]
        start: String,
        #[arg(long, default_value_t = 4)]
        steps: usize,
    },
    /// Extract untreated scenarios and evaluate counterfactual relief.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Noise model JSON; noise-free plant when omitted.
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mc_runs: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = commands::load_config(&cli.common).and_then(|cfg| match cli.command {
        Command::Synth { days, episodes } => commands::synth(&cli.common, cfg, days, episodes),
        Command::Train { data, rho } => commands::train(&cli.common, cfg, &data, rho),
        Command::Control {
            model,
            noise,
            data,
            start,
            steps,
        } => commands::control(&cli.common, cfg, &model, noise.as_deref(), &data, &start, steps),
        Command::Evaluate {
            model,
            noise,
            data,
            mc_runs,
        } => commands::evaluate(&cli.common, cfg, &model, noise.as_deref(), &data, mc_runs),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
