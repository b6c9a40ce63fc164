use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use risphase::bench::{Experiment, ExperimentConfig, Preset};
use risphase::{Error, Result};

/// Channel estimation benchmarks for RIS-aided uplinks with reduced phase allocations.
#[derive(Parser, Debug)]
#[command(name = "risphase", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment file (TOML). Built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Result file for `evaluate` and `histogram`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Directory for datasets, models and search results.
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,

    /// Array size preset; overrides the scenario dimensions.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Generate and normalize the channel dataset for every seed.
    GenerateData,
    /// Fit the GMM prior on the training samples.
    FitGmm,
    /// Train the joint phase/CNN model for every sweep point.
    TrainCnn,
    /// Exhaustive DFT column search for every swept N_v.
    SearchDft,
    /// Run the NMSE sweep and write the result CSV.
    Evaluate,
    /// Write the DFT column histogram.
    Histogram,
}

fn run(cli: Cli) -> Result<String> {
    if let Some(n) = cli.parallel {
        if n == 0 {
            return Err(Error::Config("--parallel must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = cli.preset {
        config = config.with_preset(p);
    }
    if let Some(s) = cli.seed {
        config.seeds = vec![s];
    }
    if let Some(a) = cli.artifacts {
        config.artifact_dir = a;
    }
    let out = match cli.command {
        Command::Evaluate => Some(cli.out.clone().unwrap_or_else(|| config.output.clone())),
        Command::Histogram => Some(cli.out.clone().unwrap_or_else(|| config.histogram.output.clone())),
        _ => {
            if cli.out.is_some() {
                return Err(Error::Config(
                    "--out applies to evaluate and histogram; use --artifacts for the artifact directory".into(),
                ));
            }
            None
        }
    };
    let exp = Experiment::new(config)?;
    match cli.command {
        Command::GenerateData => exp.generate_data(),
        Command::FitGmm => exp.fit_gmm(),
        Command::TrainCnn => exp.train_cnn(),
        Command::SearchDft => exp.search_dft(),
        Command::Evaluate => {
            let out = out.expect("evaluate has an output");
            let records = exp.evaluate()?;
            exp.write_results(&records, &out)?;
            Ok(format!("evaluate: {} records written to {}", records.len(), out.display()))
        }
        Command::Histogram => exp.histogram(&out.expect("histogram has an output")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
