//! Evaluation-side rewards and the composite reward of a generator output.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Evaluator, GatewayError};
use crate::metrics::{self, NumberMode};
use crate::model::{GeneratorOutput, LabeledExample, RewardBreakdown, RunConfig, TaskKind, TaskSpec};
use crate::tags;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("cannot score against an empty batch")]
    EmptyBatch,
    #[error("cannot score an empty prompt")]
    EmptyPrompt,
    #[error("evaluator failed on every example: {0}")]
    EvaluatorUnavailable(#[source] GatewayError),
}

/// Per-example evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub example_index: usize,
    pub evaluator_text: String,
    pub format_reward: f64,
    pub alignment_reward: f64,
    /// Set when the evaluator failed for this example; both rewards are then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mean format and alignment rewards over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalSummary {
    pub format: f64,
    pub alignment: f64,
}

impl EvalSummary {
    pub fn total(&self) -> f64 {
        self.format + self.alignment
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchScore {
    pub summary: EvalSummary,
    /// In batch order.
    pub outcomes: Vec<EvalOutcome>,
    pub failures: usize,
}

impl BatchScore {
    pub fn mean_eval_reward(&self) -> f64 {
        self.summary.total()
    }
}

fn number_mode(spec: &TaskSpec) -> NumberMode {
    if spec.strict_math() {
        NumberMode::Strict
    } else {
        NumberMode::Lenient
    }
}

fn option_in_set(spec: &TaskSpec, text: &str) -> Option<char> {
    metrics::match_option_letter(text).filter(|c| {
        let lower = c.to_ascii_lowercase().to_string();
        spec.labels.is_empty() || spec.labels.iter().any(|l| l.trim().eq_ignore_ascii_case(&lower))
    })
}

/// `r_format` when the evaluator output satisfies the task's format constraint.
pub fn format_reward(spec: &TaskSpec, evaluator_text: &str) -> f64 {
    let valid = match spec.kind {
        TaskKind::Classification => metrics::match_label(evaluator_text, &spec.labels).is_some(),
        TaskKind::MultipleChoice => option_in_set(spec, evaluator_text).is_some(),
        TaskKind::Math => metrics::extract_final_number(evaluator_text, number_mode(spec)).is_some(),
        TaskKind::Summarization | TaskKind::Simplification => return 0.0,
    };
    if valid {
        spec.r_format
    } else {
        0.0
    }
}

/// Whether the evaluator output answers `example` correctly, as a value in `[0, 1]`.
///
/// Exact-match tasks give 0 or 1; summarization gives the ROUGE average and
/// simplification SARI on the unit scale.
pub fn task_score(spec: &TaskSpec, evaluator_text: &str, example: &LabeledExample) -> f64 {
    let gold = example.gold.trim().to_lowercase();
    let hit = |ok: bool| if ok { 1.0 } else { 0.0 };
    match spec.kind {
        TaskKind::Classification => hit(metrics::match_label(evaluator_text, &spec.labels)
            .is_some_and(|l| l.trim().to_lowercase() == gold)),
        TaskKind::MultipleChoice => {
            hit(option_in_set(spec, evaluator_text).is_some_and(|c| c.to_ascii_lowercase().to_string() == gold))
        }
        TaskKind::Math => hit(metrics::extract_final_number(evaluator_text, number_mode(spec))
            .is_some_and(|n| metrics::numbers_equal(&n, &example.gold))),
        TaskKind::Summarization => metrics::rouge_avg(evaluator_text, &example.gold).value,
        TaskKind::Simplification => metrics::sari(&example.input, evaluator_text, &example.references())
            .map(|s| s.as_unit())
            .unwrap_or(0.0),
    }
}

/// `r_alignment` scaled by [`task_score`].
pub fn alignment_reward(spec: &TaskSpec, evaluator_text: &str, example: &LabeledExample) -> f64 {
    spec.r_alignment * task_score(spec, evaluator_text, example)
}

/// Runs `f` over `0..count` on up to `workers` threads. Results keep index order.
pub(crate) fn run_indexed<T, F>(count: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let value = f(i);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(value);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|e| e.into_inner())
        .into_iter()
        .map(|v| v.expect("every index is filled"))
        .collect()
}

/// Queries the evaluator on every example. Fails only when every query failed.
pub(crate) fn query_all(
    prompt: &str,
    data: &[LabeledExample],
    evaluator: &dyn Evaluator,
) -> Result<Vec<Result<String, GatewayError>>, RewardError> {
    if data.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let answers = run_indexed(data.len(), evaluator.parallelism(), |i| evaluator.evaluate(prompt, &data[i]));
    if answers.iter().all(Result::is_err) {
        let first = answers.into_iter().find_map(Result::err).unwrap();
        return Err(RewardError::EvaluatorUnavailable(first));
    }
    Ok(answers)
}

/// Scores `prompt` on every example of `batch`; the result is the mean of
/// `format + alignment` over the batch.
///
/// The task's output suffix is appended to the prompt first. An example whose
/// evaluator call failed scores 0 and is flagged.
pub fn score_prompt_on_batch(
    prompt: &str,
    batch: &[LabeledExample],
    spec: &TaskSpec,
    evaluator: &dyn Evaluator,
) -> Result<BatchScore, RewardError> {
    if prompt.trim().is_empty() {
        return Err(RewardError::EmptyPrompt);
    }
    let prompt = spec.finalize_prompt(prompt);
    let answers = query_all(&prompt, batch, evaluator)?;
    let mut outcomes = Vec::with_capacity(batch.len());
    let mut failures = 0;
    for (i, (answer, example)) in answers.into_iter().zip(batch).enumerate() {
        outcomes.push(match answer {
            Ok(text) => EvalOutcome {
                example_index: i,
                format_reward: format_reward(spec, &text),
                alignment_reward: alignment_reward(spec, &text, example),
                evaluator_text: text,
                error: None,
            },
            Err(e) => {
                failures += 1;
                EvalOutcome {
                    example_index: i,
                    evaluator_text: String::new(),
                    format_reward: 0.0,
                    alignment_reward: 0.0,
                    error: Some(e.to_string()),
                }
            }
        });
    }
    let n = batch.len() as f64;
    let summary = EvalSummary {
        format: outcomes.iter().map(|o| o.format_reward).sum::<f64>() / n,
        alignment: outcomes.iter().map(|o| o.alignment_reward).sum::<f64>() / n,
    };
    Ok(BatchScore {
        summary,
        outcomes,
        failures,
    })
}

/// Composes `R = R_token + R_structure + R_format + R_alignment`.
///
/// An output that failed to parse had no prompt to evaluate, so its
/// evaluation terms are zero whatever `eval` holds.
pub fn total_reward(gen_out: &GeneratorOutput, eval: EvalSummary, cfg: &RunConfig) -> RewardBreakdown {
    let token = tags::token_usage_reward(&tags::count_tokens(&gen_out.raw), cfg.r_token);
    let structure = tags::structure_reward(&gen_out.raw, cfg.r_structure);
    debug_assert!(gen_out.parse_ok || eval.total() == 0.0, "unparsed output cannot carry evaluation reward");
    let eval = if gen_out.parse_ok { eval } else { EvalSummary::default() };
    RewardBreakdown {
        token,
        structure,
        format: eval.format,
        alignment: eval.alignment,
        total: token + structure + eval.format + eval.alignment,
    }
}
