//! `dpad`: datasets, private training, scoring, detection, accounting and
//! experiment grids from the command line.

mod commands;
mod data;
mod experiment;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit status when an experiment ran but some cells failed, or a rerun
/// does not match its manifest.
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "dpad", version, about = "Differentially private training and anomaly detection")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build synthetic datasets.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train a model, optionally with clipping and noise.
    Train(commands::TrainArgs),
    /// Score every sample of a dataset by model loss.
    Score(commands::ScoreArgs),
    /// Turn scores or next-token predictions into verdicts.
    Detect(commands::DetectArgs),
    /// AUPR and AUROC of a score file.
    Eval(commands::EvalArgs),
    /// Privacy spent by subsampled Gaussian noise over many steps.
    Accountant(commands::AccountantArgs),
    /// Noise scale of a single Gaussian mechanism.
    Calibrate(commands::CalibrateArgs),
    /// Lower bound on the outlier loss gap of a private learner.
    Bound(commands::BoundArgs),
    /// Run experiment grids.
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
    /// Render the tables of an experiment directory.
    Report(experiment::ReportArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    Build(data::BuildArgs),
}

#[derive(Subcommand, Debug)]
enum ExperimentCommand {
    Run(experiment::RunArgs),
}

/// What a command produced: a JSON summary, its text rendering, and
/// whether it should exit with the partial-failure status.
pub struct Outcome {
    pub json: serde_json::Value,
    pub text: String,
    pub partial: bool,
}

impl Outcome {
    pub fn new(json: serde_json::Value, text: String) -> Self {
        Self { json, text, partial: false }
    }
}

fn dispatch(command: &Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Dataset { command: DatasetCommand::Build(args) } => {
            let json = data::build(args)?;
            let text = format!("wrote {}", args.out.display());
            Ok(Outcome::new(json, text))
        }
        Command::Train(args) => commands::train(args),
        Command::Score(args) => commands::score(args),
        Command::Detect(args) => commands::detect(args),
        Command::Eval(args) => commands::eval(args),
        Command::Accountant(args) => commands::accountant(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Bound(args) => commands::bound(args),
        Command::Experiment { command: ExperimentCommand::Run(args) } => experiment::run(args),
        Command::Report(args) => experiment::report(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(out) => {
            if cli.json {
                println!("{}", out.json);
            } else if !out.text.is_empty() {
                println!("{}", out.text.trim_end());
            }
            if out.partial {
                ExitCode::from(EXIT_PARTIAL)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            if cli.json {
                println!("{}", serde_json::json!({ "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
