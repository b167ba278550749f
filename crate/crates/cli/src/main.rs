use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use promptrl_core::commands::{self, CommandError, EXIT_USAGE};
use promptrl_core::metrics::Scale;

/// Optimize task prompts with a GRPO-trained prompt generator.
#[derive(Debug, Parser)]
#[command(name = "promptrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the training loop and write the best prompt, history and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a prompt on a dataset with the configured evaluator.
    Score {
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Print only the number.
        #[arg(long)]
        json: bool,
    },
    /// Sample prompts from a checkpointed policy and report the best on validation.
    Select {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check a config and the files it references.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(command: Command) -> Result<(), CommandError> {
    match command {
        Command::Train { config, resume, seed } => {
            let report = commands::cmd_train(&config, resume.as_deref(), seed)?;
            println!("iterations: {}", report.iterations);
            println!("best score: {}", report.best.score);
            println!("best prompt: {}", report.outputs.best_prompt.display());
            println!("history: {}", report.outputs.history.display());
            println!("checkpoint: {}", report.outputs.checkpoint.display());
        }
        Command::Score {
            prompt,
            data,
            config,
            json,
        } => {
            let score = commands::cmd_score(&prompt, &data, &config)?;
            if json {
                println!("{}", score.value);
            } else {
                let unit = match score.scale {
                    Scale::Unit => "",
                    Scale::Percent => " (percent)",
                };
                println!("score: {}{unit}", score.value);
            }
        }
        Command::Select { config, checkpoint } => {
            let best = commands::cmd_select(&config, &checkpoint)?;
            println!("score: {}", best.score);
            println!("prompt:\n{}", best.prompt);
        }
        Command::ValidateConfig { config } => {
            let cfg = commands::cmd_validate_config(&config)?;
            println!("ok: {:?} task, {} iterations", cfg.spec.kind, cfg.file.run.iterations);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
