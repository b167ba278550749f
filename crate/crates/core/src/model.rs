//! Shared domain types: task description, examples, rewards, run configuration
//! and candidate records.

use serde::{Deserialize, Serialize};

/// The family of task a prompt is being optimized for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Summarization,
    Simplification,
    MultipleChoice,
    Math,
}

impl TaskKind {
    pub fn has_label_set(self) -> bool {
        matches!(self, TaskKind::Classification | TaskKind::MultipleChoice)
    }
}

/// The scoring function used for prompt selection and alignment rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Exact-match accuracy. For math tasks this uses lenient final-number extraction.
    Accuracy,
    /// Mean of ROUGE-1, ROUGE-2 and ROUGE-L F1.
    RougeAvg,
    Sari,
    /// Math only: the whole evaluator output must be a single integer.
    ExactInteger,
}

/// Everything the reward engine needs to know about a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Canonical lowercase labels. Only used by classification and multiple choice.
    #[serde(default)]
    pub labels: Vec<String>,
    pub metric: MetricKind,
    pub r_format: f64,
    pub r_alignment: f64,
    #[serde(default)]
    pub base_prompt: String,
    /// Instruction appended to every candidate prompt before evaluation.
    #[serde(default)]
    pub output_suffix: String,
}

impl TaskSpec {
    /// Binary sentiment classification with the unified classification rewards.
    pub fn classification(labels: &[&str]) -> Self {
        let quoted: Vec<String> = labels.iter().map(|l| format!("'{l}'")).collect();
        let listing = match quoted.split_last() {
            Some((last, rest)) if !rest.is_empty() => format!("{} or {}", rest.join(", "), last),
            Some((last, _)) => last.clone(),
            None => String::new(),
        };
        TaskSpec {
            kind: TaskKind::Classification,
            labels: labels.iter().map(|l| l.to_lowercase()).collect(),
            metric: MetricKind::Accuracy,
            r_format: 1.0,
            r_alignment: 1.0,
            base_prompt: String::new(),
            output_suffix: format!("Return only label {listing} without any other text."),
        }
    }

    /// True for tasks whose evaluator must answer with an exact integer.
    pub fn strict_math(&self) -> bool {
        self.kind == TaskKind::Math && self.metric == MetricKind::ExactInteger
    }

    /// Appends the output suffix unless the prompt already ends with it.
    pub fn finalize_prompt(&self, prompt: &str) -> String {
        let suffix = self.output_suffix.trim();
        if suffix.is_empty() || prompt.trim_end().ends_with(suffix) {
            return prompt.to_string();
        }
        if prompt.trim().is_empty() {
            return suffix.to_string();
        }
        format!("{}\n{}", prompt.trim_end(), suffix)
    }
}

/// Lists every broken invariant of `spec`. Empty means the spec is valid.
pub fn validate_task_spec(spec: &TaskSpec) -> Vec<String> {
    let mut violations = Vec::new();
    let needs_labels = spec.kind.has_label_set();
    if needs_labels && spec.labels.is_empty() {
        violations.push(format!("labels: must be nonempty for {:?} tasks", spec.kind));
    }
    if !needs_labels && !spec.labels.is_empty() {
        violations.push(format!("labels: must be empty for {:?} tasks", spec.kind));
    }
    let mut seen = std::collections::HashSet::new();
    for label in &spec.labels {
        if label.trim().is_empty() {
            violations.push("labels: empty label".to_string());
        } else if *label != label.trim().to_lowercase() {
            violations.push(format!("labels: '{label}' is not canonical (trimmed lowercase)"));
        }
        if !seen.insert(label.as_str()) {
            violations.push(format!("labels: duplicate label '{label}'"));
        }
    }
    if spec.kind == TaskKind::MultipleChoice {
        for label in &spec.labels {
            if !matches!(label.as_str(), "a" | "b" | "c" | "d" | "e") {
                violations.push(format!("labels: '{label}' is not an option letter a-e"));
            }
        }
    }
    let metric_ok = match spec.kind {
        TaskKind::Classification | TaskKind::MultipleChoice => spec.metric == MetricKind::Accuracy,
        TaskKind::Summarization => spec.metric == MetricKind::RougeAvg,
        TaskKind::Simplification => spec.metric == MetricKind::Sari,
        TaskKind::Math => matches!(spec.metric, MetricKind::Accuracy | MetricKind::ExactInteger),
    };
    if !metric_ok {
        violations.push(format!(
            "metric: {:?} is not consistent with {:?} tasks",
            spec.metric, spec.kind
        ));
    }
    for (name, value) in [("r_format", spec.r_format), ("r_alignment", spec.r_alignment)] {
        if !(value.is_finite() && value >= 0.0) {
            violations.push(format!("{name}: must be a nonnegative real, got {value}"));
        }
    }
    if matches!(spec.kind, TaskKind::Summarization | TaskKind::Simplification) && spec.r_format != 0.0 {
        violations.push(format!(
            "r_format: must be 0 for {:?} tasks, got {}",
            spec.kind, spec.r_format
        ));
    }
    violations
}

/// One task instance: an input, its gold answer and, for simplification,
/// additional references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub input: String,
    pub gold: String,
    #[serde(default, rename = "refs", skip_serializing_if = "Vec::is_empty")]
    pub extra_refs: Vec<String>,
}

impl LabeledExample {
    pub fn new(input: impl Into<String>, gold: impl Into<String>) -> Self {
        LabeledExample {
            input: input.into(),
            gold: gold.into(),
            extra_refs: Vec::new(),
        }
    }

    /// Gold plus any extra references.
    pub fn references(&self) -> Vec<&str> {
        std::iter::once(self.gold.as_str())
            .chain(self.extra_refs.iter().map(String::as_str))
            .collect()
    }
}

/// A raw generator emission and the segments parsed out of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorOutput {
    pub raw: String,
    pub think: Option<String>,
    pub answer: Option<String>,
    pub parse_ok: bool,
}

/// The four reward components and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub token: f64,
    pub structure: f64,
    pub format: f64,
    pub alignment: f64,
    pub total: f64,
}

/// Hyperparameters of a training run. `Default` carries the reference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Generator samples per iteration.
    pub group_size: usize,
    /// Training examples scored per candidate prompt.
    pub batch_size: usize,
    pub iterations: usize,
    /// Prompt selection runs every this many iterations.
    pub selection_period: usize,
    /// Prompts sampled at each selection event.
    pub n_test: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub r_token: f64,
    pub r_structure: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub advantage_std_floor: f64,
    /// Optional cap on the number of validation examples used for selection.
    pub validation_cap: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            group_size: 4,
            batch_size: 100,
            iterations: 2000,
            selection_period: 100,
            n_test: 10,
            epsilon: 0.2,
            beta: 0.04,
            r_token: 0.75,
            r_structure: 0.75,
            learning_rate: 0.05,
            weight_decay: 0.1,
            seed: 0,
            advantage_std_floor: 1e-8,
            validation_cap: None,
        }
    }
}

impl RunConfig {
    /// Lists every broken invariant. A selection period longer than the run is
    /// allowed; selection then never fires.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.group_size < 2 {
            v.push(format!("group_size: must be >= 2, got {}", self.group_size));
        }
        if self.batch_size == 0 {
            v.push("batch_size: must be >= 1".to_string());
        }
        if self.selection_period == 0 {
            v.push("selection_period: must be >= 1".to_string());
        }
        if self.n_test == 0 {
            v.push("n_test: must be >= 1".to_string());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            v.push(format!("epsilon: must lie in (0, 1), got {}", self.epsilon));
        }
        for (name, value) in [
            ("beta", self.beta),
            ("r_token", self.r_token),
            ("r_structure", self.r_structure),
            ("weight_decay", self.weight_decay),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                v.push(format!("{name}: must be a nonnegative real, got {value}"));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            v.push(format!("learning_rate: must be positive, got {}", self.learning_rate));
        }
        if !(self.advantage_std_floor.is_finite() && self.advantage_std_floor > 0.0) {
            v.push(format!(
                "advantage_std_floor: must be positive, got {}",
                self.advantage_std_floor
            ));
        }
        if self.validation_cap == Some(0) {
            v.push("validation_cap: must be >= 1 when set".to_string());
        }
        v
    }

    pub fn max_reward(&self, spec: &TaskSpec) -> f64 {
        self.r_token + self.r_structure + spec.r_format + spec.r_alignment
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOrigin {
    TrainingSample,
    SelectionSample,
}

/// A prompt together with its validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub prompt: String,
    pub score: f64,
    pub iteration: usize,
    pub origin: CandidateOrigin,
}

impl CandidateRecord {
    /// The record a run starts from: empty prompt, score 0.
    pub fn initial() -> Self {
        CandidateRecord {
            prompt: String::new(),
            score: 0.0,
            iteration: 0,
            origin: CandidateOrigin::SelectionSample,
        }
    }
}
