//! The operations behind the command-line tool.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{Config, ConfigError, OutputPaths};
use crate::dataset::{self, DatasetError};
use crate::metrics::MetricScore;
use crate::model::CandidateRecord;
use crate::reward::RewardError;
use crate::training::{self, AbortCause, Checkpoint, RunOptions, TrainingError};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Evaluation(#[from] AbortCause),
    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Dataset(d) => CommandError::Dataset(d),
            other => CommandError::Config(other),
        }
    }
}

impl From<RewardError> for CommandError {
    fn from(e: RewardError) -> Self {
        CommandError::Evaluation(AbortCause::Evaluator(e))
    }
}

/// Process exit status: 1 usage or config, 2 data, 3 evaluator transport.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRANSPORT: i32 = 3;

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => EXIT_USAGE,
            CommandError::Dataset(_) | CommandError::Input { .. } => EXIT_DATA,
            CommandError::Training(TrainingError::Checkpoint(_)) => EXIT_DATA,
            CommandError::Training(e) if e.is_transport() => EXIT_TRANSPORT,
            CommandError::Training(TrainingError::EmptyDataset(_)) => EXIT_DATA,
            CommandError::Training(_) => EXIT_USAGE,
            CommandError::Evaluation(AbortCause::Evaluator(RewardError::EvaluatorUnavailable(_))) => EXIT_TRANSPORT,
            CommandError::Evaluation(AbortCause::Generator(crate::generator::GeneratorError::Gateway(_))) => {
                EXIT_TRANSPORT
            }
            CommandError::Evaluation(_) => EXIT_DATA,
            CommandError::Output { .. } => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best: CandidateRecord,
    pub iterations: usize,
    pub outputs: OutputPaths,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CommandError> {
    let out = |source| CommandError::Output {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(out)?;
    }
    std::fs::write(path, contents).map_err(out)
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("records serialize");
        buf.write_all(b"\n").unwrap();
    }
    buf
}

/// Trains from `config_path`, optionally resuming from a checkpoint, and
/// writes the best prompt, history, timing log and final checkpoint.
pub fn cmd_train(config_path: &Path, resume: Option<&Path>, seed: Option<u64>) -> Result<TrainReport, CommandError> {
    let mut config = Config::load(config_path)?;
    if let Some(seed) = seed {
        config.file.run.seed = seed;
    }
    let train = config.load_train()?;
    let valid = config.load_valid()?;
    let evaluator = config.evaluator();
    let mut generator = config.generator()?;
    let outputs = config.outputs();

    let start = match resume {
        Some(path) => {
            let ckpt = Checkpoint::read(path)?;
            generator
                .load_state(&ckpt.generator)
                .map_err(|e| TrainingError::Checkpoint(e.to_string()))?;
            Some(ckpt.state)
        }
        None => None,
    };
    let dir = outputs.checkpoint.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|source| CommandError::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    let opts = RunOptions {
        checkpoint: Some(outputs.checkpoint.clone()),
    };
    let outcome = training::run_training(
        &config.file.run,
        &config.spec,
        &train,
        &valid,
        generator.as_mut(),
        evaluator.as_ref(),
        start,
        &opts,
    )?;
    write_file(&outputs.best_prompt, outcome.best().prompt.as_bytes())?;
    write_file(&outputs.history, &jsonl(outcome.history()))?;
    write_file(&outputs.timing, &jsonl(&outcome.timings))?;
    Ok(TrainReport {
        best: outcome.state.best.clone(),
        iterations: outcome.state.iteration,
        outputs,
    })
}

/// Reads a prompt file. Trailing whitespace is dropped; an empty prompt is an error.
pub fn read_prompt(path: &Path) -> Result<String, CommandError> {
    let text = std::fs::read_to_string(path).map_err(|e| CommandError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let prompt = text.trim_end().to_string();
    if prompt.trim().is_empty() {
        return Err(CommandError::Input {
            path: path.to_path_buf(),
            message: "prompt file is empty".into(),
        });
    }
    Ok(prompt)
}

/// The task metric of the prompt in `prompt_file` on `data_path`.
pub fn cmd_score(prompt_file: &Path, data_path: &Path, config_path: &Path) -> Result<MetricScore, CommandError> {
    let config = Config::load(config_path)?;
    let prompt = read_prompt(prompt_file)?;
    let data = dataset::load_dataset(data_path, &config.spec)?;
    let evaluator = config.evaluator();
    Ok(training::evaluate_prompt(&prompt, &data, &config.spec, evaluator.as_ref())?)
}

/// One selection round with the policy stored in `checkpoint`. The best
/// sampled prompt is returned even when it scores 0.
pub fn cmd_select(config_path: &Path, checkpoint: &Path) -> Result<CandidateRecord, CommandError> {
    let config = Config::load(config_path)?;
    let ckpt = Checkpoint::read(checkpoint)?;
    let mut generator = config.generator()?;
    generator
        .load_state(&ckpt.generator)
        .map_err(|e| TrainingError::Checkpoint(e.to_string()))?;
    let mut valid = config.load_valid()?;
    if let Some(cap) = config.file.run.validation_cap {
        valid.truncate(cap);
    }
    let evaluator = config.evaluator();
    let mut rng = ckpt.state.rng.clone();
    let picked = training::select_best_prompt(
        generator.as_ref(),
        &valid,
        &config.spec,
        evaluator.as_ref(),
        config.file.run.n_test,
        &CandidateRecord {
            score: f64::NEG_INFINITY,
            ..CandidateRecord::initial()
        },
        &mut rng,
        ckpt.state.iteration,
    )?;
    Ok(picked.best)
}

/// Loads the config and every file it references.
pub fn cmd_validate_config(config_path: &Path) -> Result<Config, CommandError> {
    let config = Config::load(config_path)?;
    config.load_train()?;
    config.load_valid()?;
    config.generator()?;
    Ok(config)
}
