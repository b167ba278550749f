//! TOML run configuration with `[run]`, `[task]`, `[evaluator]`, `[policy]`
//! and `[output]` sections. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, DatasetError};
use crate::gateway::{Evaluator, MockEvaluator, MockRulebook, RemoteEvaluator, RemoteSettings};
use crate::generator::{refinement_request, PromptGenerator, RemoteGenerator, SlotGenerator};
use crate::model::{validate_task_spec, LabeledExample, MetricKind, RunConfig, TaskKind, TaskSpec};
use crate::policy::{Demonstration, PolicyError, PromptTemplate, SlotPolicyParams};

/// Largest demonstration bank a slot policy may use.
pub const MAX_BANK: usize = 16;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config {path}: {}", .problems.join("; "))]
    Invalid { path: PathBuf, problems: Vec<String> },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    #[serde(default)]
    pub labels: Vec<String>,
    pub metric: Option<MetricKind>,
    pub r_format: Option<f64>,
    pub r_alignment: Option<f64>,
    #[serde(default)]
    pub base_prompt: String,
    pub output_suffix: Option<String>,
    pub train: PathBuf,
    pub valid: PathBuf,
}

impl TaskSection {
    pub fn to_spec(&self) -> TaskSpec {
        let labels: Vec<&str> = self.labels.iter().map(String::as_str).collect();
        let exact = !matches!(self.kind, TaskKind::Summarization | TaskKind::Simplification);
        let default_suffix = match self.kind {
            TaskKind::Classification => TaskSpec::classification(&labels).output_suffix,
            _ => String::new(),
        };
        TaskSpec {
            kind: self.kind,
            labels: self.labels.iter().map(|l| l.trim().to_lowercase()).collect(),
            metric: self.metric.unwrap_or(match self.kind {
                TaskKind::Summarization => MetricKind::RougeAvg,
                TaskKind::Simplification => MetricKind::Sari,
                _ => MetricKind::Accuracy,
            }),
            r_format: self.r_format.unwrap_or(if exact { 1.0 } else { 0.0 }),
            r_alignment: self.r_alignment.unwrap_or(1.0),
            base_prompt: self.base_prompt.clone(),
            output_suffix: self.output_suffix.clone().unwrap_or(default_suffix),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvaluatorSection {
    Mock(MockRulebook),
    Remote(RemoteSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlotPolicySection {
    #[serde(default = "default_template")]
    pub template: String,
    pub instructions: Vec<String>,
    #[serde(default = "default_max_shots")]
    pub max_shots: usize,
    /// JSONL file of extra demonstrations in dataset format.
    pub bank: Option<PathBuf>,
    /// This many examples from the end of the training file move into the
    /// bank instead of the training set.
    #[serde(default)]
    pub bank_holdout: usize,
}

fn default_template() -> String {
    "{instruction}".into()
}

fn default_max_shots() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemotePolicySection {
    /// Phrase completing "another model that performs ...".
    pub task_description: String,
    pub model: RemoteSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySection {
    Slot(SlotPolicySection),
    Remote(RemotePolicySection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_out_dir() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunConfig,
    pub task: TaskSection,
    pub evaluator: EvaluatorSection,
    pub policy: PolicySection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A parsed config with paths resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub path: PathBuf,
    pub file: ConfigFile,
    pub spec: TaskSpec,
}

/// Artifact locations inside the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub best_prompt: PathBuf,
    pub history: PathBuf,
    pub timing: PathBuf,
    pub checkpoint: PathBuf,
}

impl Config {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let spec = file.task.to_spec();
        let config = Config {
            path: path.to_path_buf(),
            file,
            spec,
        };
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(ConfigError::Invalid {
                path: path.to_path_buf(),
                problems,
            });
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    fn problems(&self) -> Vec<String> {
        let mut p: Vec<String> = self.file.run.validate().into_iter().map(|m| format!("run.{m}")).collect();
        p.extend(validate_task_spec(&self.spec).into_iter().map(|m| format!("task.{m}")));
        if let PolicySection::Slot(slot) = &self.file.policy {
            if slot.instructions.is_empty() {
                p.push("policy.instructions: must list at least one instruction".into());
            }
            if slot.max_shots > MAX_BANK {
                p.push(format!("policy.max_shots: at most {MAX_BANK}"));
            }
        }
        p
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.path.parent().unwrap_or(Path::new(".")).join(p)
        }
    }

    pub fn outputs(&self) -> OutputPaths {
        let dir = self.resolve(&self.file.output.dir);
        OutputPaths {
            best_prompt: dir.join("best_prompt.txt"),
            history: dir.join("history.jsonl"),
            timing: dir.join("timing.jsonl"),
            checkpoint: dir.join("checkpoint.txt"),
        }
    }

    /// Training examples, minus any moved into the demonstration bank.
    pub fn load_train(&self) -> Result<Vec<LabeledExample>, ConfigError> {
        let mut train = dataset::load_dataset(&self.resolve(&self.file.task.train), &self.spec)?;
        if let PolicySection::Slot(slot) = &self.file.policy {
            let keep = train.len().saturating_sub(slot.bank_holdout);
            if keep == 0 {
                return Err(ConfigError::Invalid {
                    path: self.path.clone(),
                    problems: vec!["policy.bank_holdout: leaves no training examples".into()],
                });
            }
            train.truncate(keep);
        }
        Ok(train)
    }

    pub fn load_valid(&self) -> Result<Vec<LabeledExample>, ConfigError> {
        Ok(dataset::load_dataset(&self.resolve(&self.file.task.valid), &self.spec)?)
    }

    /// Held-out training pairs followed by the bank file's entries.
    pub fn demonstration_bank(&self) -> Result<Vec<Demonstration>, ConfigError> {
        let PolicySection::Slot(slot) = &self.file.policy else {
            return Ok(Vec::new());
        };
        let mut bank = Vec::new();
        if slot.bank_holdout > 0 {
            let all = dataset::load_dataset(&self.resolve(&self.file.task.train), &self.spec)?;
            let start = all.len().saturating_sub(slot.bank_holdout);
            bank.extend(all[start..].iter().map(|e| Demonstration::new(&e.input, &e.gold)));
        }
        if let Some(path) = &slot.bank {
            let extra = dataset::load_dataset(&self.resolve(path), &self.spec)?;
            bank.extend(extra.into_iter().map(|e| Demonstration::new(e.input, e.gold)));
        }
        if bank.len() > MAX_BANK {
            return Err(ConfigError::Invalid {
                path: self.path.clone(),
                problems: vec![format!("policy: bank has {} entries, at most {MAX_BANK} allowed", bank.len())],
            });
        }
        Ok(bank)
    }

    pub fn evaluator(&self) -> Box<dyn Evaluator> {
        match &self.file.evaluator {
            EvaluatorSection::Mock(rules) => {
                let mut rules = rules.clone();
                if rules.labels.is_empty() {
                    rules.labels = self.spec.labels.clone();
                }
                Box::new(MockEvaluator::new(rules))
            }
            EvaluatorSection::Remote(settings) => Box::new(RemoteEvaluator::new(settings.clone())),
        }
    }

    /// A fresh generator: a uniform slot policy or a remote LLM.
    pub fn generator(&self) -> Result<Box<dyn PromptGenerator>, ConfigError> {
        match &self.file.policy {
            PolicySection::Slot(slot) => {
                let params = SlotPolicyParams::uniform(
                    slot.instructions.clone(),
                    self.demonstration_bank()?,
                    slot.max_shots,
                )?;
                let template = PromptTemplate::new(slot.template.clone(), self.spec.output_suffix.clone());
                Ok(Box::new(SlotGenerator::new(template, params)))
            }
            PolicySection::Remote(remote) => Ok(Box::new(RemoteGenerator::new(
                remote.model.clone(),
                refinement_request(&remote.task_description, &self.spec.base_prompt),
            ))),
        }
    }
}
