use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rarity_lab::output::{create_run_dir, write_run, RunMeta};
use rarity_lab::{execute, summarize, ExperimentConfig, Format, HarnessError};

#[derive(Parser)]
#[command(name = "rarity", version, about = "Rare-event gradient estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Unbiasedness, variance ordering and the 1/rho factor on a mixture spec.
    VerifyTheorem(RunArgs),
    /// Signal-to-noise ratios of both estimators over event frequencies.
    SnrSweep(RunArgs),
    /// Required sample size against event frequency.
    Longtail(RunArgs),
    /// Importance-weight second moment against dimension.
    IsDim(RunArgs),
    /// Full vs filtered policy gradients, and the finite-difference oracle.
    GradCompare(RunArgs),
    /// Policy-gradient training, optionally racing full against filtered.
    Train(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Parent directory for the run directory [default: runs].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

impl Command {
    fn split(self) -> (&'static str, RunArgs) {
        match self {
            Command::VerifyTheorem(a) => ("verify-theorem", a),
            Command::SnrSweep(a) => ("snr-sweep", a),
            Command::Longtail(a) => ("longtail", a),
            Command::IsDim(a) => ("is-dim", a),
            Command::GradCompare(a) => ("grad-compare", a),
            Command::Train(a) => ("train", a),
        }
    }
}

fn run(kind: &str, args: RunArgs) -> Result<bool, HarnessError> {
    let (raw, mut config) = ExperimentConfig::load(&args.config)?;
    if config.experiment.kind() != kind {
        return Err(HarnessError::Config(format!(
            "{} describes a `{}` experiment, not `{kind}`",
            args.config.display(),
            config.experiment.kind()
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        config.jobs = Some(jobs);
    }
    if args.out.is_some() {
        config.out_dir = args.out;
    }
    if args.format.is_some() {
        config.format = args.format;
    }
    config.validate()?;

    let base = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let dir = create_run_dir(&base, kind, &config.to_toml())?;
    let started_utc = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    let result = execute(&config)?;
    let meta = RunMeta {
        tool_version: env!("CARGO_PKG_VERSION"),
        started_utc,
        wall_seconds: clock.elapsed().as_secs_f64(),
        jobs: config.jobs.unwrap_or_else(rayon::current_num_threads),
    };
    write_run(&dir, &result, &raw, config.format.unwrap_or_default(), &meta)?;
    print!("{}", summarize(&result));
    println!("results: {}", dir.display());
    Ok(result.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
