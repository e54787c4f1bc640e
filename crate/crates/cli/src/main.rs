//! `mbp`: synthesize datasets, train, evaluate, deblur frame folders and
//! count parameters of the multi-scale bidirectional recurrent deblurring model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Failure categories with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or arguments (exit 2).
    Usage(String),
    /// Invalid configuration, every problem listed (exit 2).
    Config(Vec<String>),
    /// The work itself failed (exit 1).
    Runtime(String),
}

impl From<mbp_core::Error> for CliError {
    fn from(e: mbp_core::Error) -> Self {
        match e {
            mbp_core::Error::Config(m) => CliError::Config(m.split("; ").map(str::to_string).collect()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl CliError {
    fn report(&self) -> u8 {
        match self {
            CliError::Usage(m) => {
                eprintln!("error: {m}");
                2
            }
            CliError::Config(list) => {
                eprintln!("error: invalid configuration ({} problem{}):", list.len(), if list.len() == 1 { "" } else { "s" });
                for p in list {
                    eprintln!("  - {p}");
                }
                2
            }
            CliError::Runtime(m) => {
                eprintln!("error: {m}");
                1
            }
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "mbp", version, about = "Video deblurring with multi-scale bidirectional recurrent propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML file with [model], [train], [data], [run], [eval] and [synth] sections.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.lr_max=1e-4 (repeatable; flags win over the file).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the fully resolved configuration as TOML and exit.
    #[arg(long)]
    pub dump_config: bool,
}

/// Model architecture overrides.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Architecture: baseline, baseline_mbp or rnn_mbp.
    #[arg(long)]
    pub variant: Option<String>,
    /// Base channel width C.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Channel-attention reduction ratio r.
    #[arg(long)]
    pub reduction: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a paired blurry/sharp dataset (procedural toy scenes, or frames from --source).
    Synthesize(commands::SynthesizeArgs),
    /// Train a model; checkpoints and a JSON-lines log go to the run directory.
    Train(commands::TrainArgs),
    /// Score a checkpoint on a dataset split and write report.csv / report.json.
    Eval(commands::EvalArgs),
    /// Deblur a directory of frames with a checkpoint.
    Infer(commands::InferArgs),
    /// Print the learnable parameter count of a configuration.
    Params(commands::ParamsArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Synthesize(a) => commands::synthesize(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Infer(a) => commands::infer(a),
        Command::Params(a) => commands::params(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(e.report()),
    }
}
