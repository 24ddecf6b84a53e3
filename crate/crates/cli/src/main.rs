mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polarsynth::config::Settings;
use polarsynth::Result;

#[derive(Parser)]
#[command(name = "polarsynth", version, about = "Thermal-to-visible face synthesis and verification")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Sectioned key = value settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. --set train.epochs=5. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run directory for all outputs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Shorthand for --set run.seed=N.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic paired dataset and its protocol splits.
    GenData,
    /// Pretrain the feature network and fine-tune the attribute predictor.
    FinetuneQ,
    /// Train the generator and discriminators.
    Train(commands::TrainArgs),
    /// Write the output pyramid and a comparison grid for probes.
    Synth(commands::SynthArgs),
    /// Score the test split and report ROC, AUC and EER.
    Eval(commands::EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(commands::GradcheckArgs),
    /// Train and evaluate a matrix of loss-term sets and scale counts.
    Ablate(commands::AblateArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::FinetuneQ => "finetune-q",
            Command::Train(_) => "train",
            Command::Synth(_) => "synth",
            Command::Eval(_) => "eval",
            Command::Gradcheck(_) => "gradcheck",
            Command::Ablate(_) => "ablate",
        }
    }
}

/// Defaults, then the config file (or `base` when none is given), then
/// environment variables, then `--set`, then `--seed`.
pub fn resolve_settings(common: &Common, base: Option<PathBuf>) -> Result<Settings> {
    let mut s = match common.config.clone().or(base) {
        Some(path) => Settings::from_file(&path)?,
        None => Settings::default(),
    };
    s.apply_env(std::env::vars())?;
    for item in &common.overrides {
        s.apply_override(item)?;
    }
    if let Some(seed) = common.seed {
        s.set("run.seed", &seed.to_string())?;
    }
    s.validate()?;
    Ok(s)
}

fn dispatch(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let out = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(name));
    let c = &cli.common;
    match cli.command {
        Command::GenData => commands::gen_data(c, &out),
        Command::FinetuneQ => commands::finetune_q(c, &out),
        Command::Train(a) => commands::train(c, &out, &a),
        Command::Synth(a) => commands::synth(c, &out, &a),
        Command::Eval(a) => commands::eval(c, &out, &a),
        Command::Gradcheck(a) => commands::gradcheck(c, &out, &a),
        Command::Ablate(a) => commands::ablate(c, &out, &a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
