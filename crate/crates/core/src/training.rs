//! The outer loop: sample a batch, draw a group of prompts, reward them,
//! update the generator, and periodically keep the best prompt seen on
//! validation data.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::Evaluator;
use crate::generator::{GeneratorError, PromptGenerator, Rollout};
use crate::grpo::StepStats;
use crate::metrics::{MetricScore, Scale};
use crate::model::{CandidateOrigin, CandidateRecord, LabeledExample, MetricKind, RewardBreakdown, RunConfig, TaskSpec};
use crate::policy::count_demonstrations;
use crate::reward::{self, EvalSummary, RewardError};

pub const RUN_MAGIC: &str = "promptrl-run";
pub const RUN_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AbortCause {
    #[error(transparent)]
    Evaluator(#[from] RewardError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid run config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("run aborted at iteration {iteration}: {cause}{}", checkpoint_note(.checkpoint))]
    Aborted {
        iteration: usize,
        cause: AbortCause,
        checkpoint: Option<PathBuf>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn checkpoint_note(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" (checkpoint written to {})", p.display()),
        None => String::new(),
    }
}

impl TrainingError {
    /// True when the run stopped because a model endpoint could not be reached.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            TrainingError::Aborted {
                cause: AbortCause::Evaluator(RewardError::EvaluatorUnavailable(_))
                    | AbortCause::Generator(GeneratorError::Gateway(_)),
                ..
            }
        )
    }
}

/// One member of an iteration's group, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    /// Slot choices for policy samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<usize>>,
    /// Raw emission, kept for generators whose samples cannot be replayed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission: Option<String>,
    pub parse_ok: bool,
    /// Demonstrations in the extracted prompt.
    pub shots: usize,
    pub reward: RewardBreakdown,
    /// Evaluator calls that failed on this prompt's batch.
    #[serde(default)]
    pub eval_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    /// Validation score of each sampled prompt, in sample order.
    pub scores: Vec<f64>,
    /// Index of the sample that became the new best, if any.
    pub chosen: Option<usize>,
    pub best_score: f64,
    /// Digest of the generator state before and after the event.
    pub params_before: String,
    pub params_after: String,
}

/// Per-iteration statistics. One record per iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Training indices of the batch.
    pub batch: Vec<usize>,
    pub group: Vec<GroupEntry>,
    pub mean_reward: f64,
    /// Absent for generators that are only sampled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionEvent>,
    pub best_score: f64,
}

/// Wall-clock time at which an iteration finished, kept apart from the
/// history so that histories of identical runs compare equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub iteration: usize,
    pub unix_ms: u128,
}

#[derive(Clone, PartialEq)]
pub struct RunState {
    /// Last completed iteration.
    pub iteration: usize,
    pub best: CandidateRecord,
    pub rng: ChaCha8Rng,
    pub history: Vec<IterationRecord>,
}

impl fmt::Debug for RunState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunState")
            .field("iteration", &self.iteration)
            .field("best", &self.best)
            .field("history_len", &self.history.len())
            .finish_non_exhaustive()
    }
}

impl RunState {
    pub fn new(seed: u64) -> Self {
        RunState {
            iteration: 0,
            best: CandidateRecord::initial(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

/// A resumable snapshot: run state plus the generator's own state text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: RunState,
    pub generator: String,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let s = &self.state;
        let mut out = format!("{RUN_MAGIC} v{RUN_VERSION}\n");
        out.push_str(&format!("iteration\t{}\n", s.iteration));
        out.push_str(&format!(
            "rng\t{}\t{}\t{}\n",
            hex(&s.rng.get_seed()),
            s.rng.get_stream(),
            s.rng.get_word_pos()
        ));
        out.push_str(&format!("best\t{}\n", serde_json::to_string(&s.best).unwrap()));
        for record in &s.history {
            out.push_str(&format!("history\t{}\n", serde_json::to_string(record).unwrap()));
        }
        out.push_str("generator\n");
        out.push_str(&self.generator);
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TrainingError> {
        let bad = |line: usize, m: &str| TrainingError::Checkpoint(format!("line {line}: {m}"));
        let mut lines = text.split_inclusive('\n').enumerate();
        let header = lines.next().map(|(_, l)| l.trim_end()).unwrap_or("");
        if header != format!("{RUN_MAGIC} v{RUN_VERSION}") {
            return Err(TrainingError::Checkpoint(format!(
                "version mismatch: expected '{RUN_MAGIC} v{RUN_VERSION}', found '{header}'"
            )));
        }
        let (mut iteration, mut rng, mut best) = (None, None, None);
        let mut history = Vec::new();
        let mut consumed = header.len() + 1;
        for (i, raw) in lines {
            consumed += raw.len();
            let line = raw.trim_end_matches(['\n', '\r']);
            let n = i + 1;
            if line == "generator" {
                let state = RunState {
                    iteration: iteration.ok_or_else(|| bad(n, "missing iteration"))?,
                    rng: rng.ok_or_else(|| bad(n, "missing rng"))?,
                    best: best.ok_or_else(|| bad(n, "missing best"))?,
                    history,
                };
                if state.history.len() != state.iteration {
                    return Err(bad(n, "history length differs from iteration"));
                }
                return Ok(Checkpoint {
                    state,
                    generator: text.get(consumed..).unwrap_or("").to_string(),
                });
            }
            let (key, value) = line.split_once('\t').ok_or_else(|| bad(n, "expected key<TAB>value"))?;
            match key {
                "iteration" => iteration = Some(value.parse().map_err(|_| bad(n, "bad iteration"))?),
                "rng" => {
                    let parts: Vec<&str> = value.split('\t').collect();
                    let [seed, stream, pos] = parts.as_slice() else {
                        return Err(bad(n, "rng needs seed, stream and word position"));
                    };
                    let mut r = ChaCha8Rng::from_seed(unhex(seed).ok_or_else(|| bad(n, "bad rng seed"))?);
                    r.set_stream(stream.parse().map_err(|_| bad(n, "bad rng stream"))?);
                    r.set_word_pos(pos.parse().map_err(|_| bad(n, "bad rng word position"))?);
                    rng = Some(r);
                }
                "best" => best = Some(serde_json::from_str(value).map_err(|e| bad(n, &e.to_string()))?),
                "history" => history.push(serde_json::from_str(value).map_err(|e| bad(n, &e.to_string()))?),
                other => return Err(bad(n, &format!("unknown record '{other}'"))),
            }
        }
        Err(TrainingError::Checkpoint("missing generator section".into()))
    }

    pub fn write(&self, path: &Path) -> Result<(), TrainingError> {
        let tmp = path.with_extension("tmp");
        let io = |source| TrainingError::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::write(&tmp, self.to_text()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, TrainingError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// The task metric of `prompt` over all of `data`.
///
/// Accuracy for exact-match tasks, mean ROUGE average for summarization and
/// mean SARI (percent) for simplification. Failed evaluator calls count as 0.
pub fn evaluate_prompt(
    prompt: &str,
    data: &[LabeledExample],
    spec: &TaskSpec,
    evaluator: &dyn Evaluator,
) -> Result<MetricScore, RewardError> {
    if prompt.trim().is_empty() {
        return Err(RewardError::EmptyPrompt);
    }
    let answers = reward::query_all(&spec.finalize_prompt(prompt), data, evaluator)?;
    let total: f64 = answers
        .iter()
        .zip(data)
        .map(|(a, ex)| a.as_ref().map_or(0.0, |text| reward::task_score(spec, text, ex)))
        .sum();
    let mean = total / data.len() as f64;
    Ok(match spec.metric {
        MetricKind::Sari => MetricScore {
            value: mean * 100.0,
            scale: Scale::Percent,
        },
        _ => MetricScore::unit(mean),
    })
}

/// Index of the best score if it strictly beats `current`; ties go to the
/// lowest index.
pub fn pick_candidate(scores: &[f64], current: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.filter(|&b| scores[b] > current)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: CandidateRecord,
    pub scores: Vec<f64>,
    pub chosen: Option<usize>,
}

/// Samples `n_test` prompts and keeps the best only if it strictly improves
/// on `current_best`. Scores are on the metric's own scale. Never mutates the
/// generator.
#[allow(clippy::too_many_arguments)]
pub fn select_best_prompt(
    generator: &dyn PromptGenerator,
    valid: &[LabeledExample],
    spec: &TaskSpec,
    evaluator: &dyn Evaluator,
    n_test: usize,
    current_best: &CandidateRecord,
    rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<Selection, AbortCause> {
    if valid.is_empty() {
        return Err(RewardError::EmptyBatch.into());
    }
    let mut prompts = Vec::with_capacity(n_test);
    for _ in 0..n_test {
        prompts.push(generator.sample(rng)?.prompt().map(str::to_string));
    }
    let mut cache: HashMap<&str, f64> = HashMap::new();
    let mut scores = Vec::with_capacity(n_test);
    for p in &prompts {
        let score = match p.as_deref() {
            None => 0.0,
            Some(p) => match cache.get(p) {
                Some(&s) => s,
                None => {
                    let s = evaluate_prompt(p, valid, spec, evaluator)?.value;
                    cache.insert(p, s);
                    s
                }
            },
        };
        scores.push(score);
    }
    let chosen = pick_candidate(&scores, current_best.score);
    let best = match chosen {
        Some(i) => CandidateRecord {
            prompt: spec.finalize_prompt(prompts[i].as_deref().unwrap()),
            score: scores[i],
            iteration,
            origin: CandidateOrigin::SelectionSample,
        },
        None => current_best.clone(),
    };
    Ok(Selection { best, scores, chosen })
}

#[derive(Debug, Default, Clone)]
pub struct RunOptions {
    /// Where to write checkpoints: after each selection event, at the end of
    /// the run and before an abort.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: RunState,
    pub timings: Vec<TimingRecord>,
}

impl RunOutcome {
    pub fn best(&self) -> &CandidateRecord {
        &self.state.best
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.state.history
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn save(opts: &RunOptions, state: &RunState, generator: &dyn PromptGenerator) -> Result<Option<PathBuf>, TrainingError> {
    let Some(path) = &opts.checkpoint else {
        return Ok(None);
    };
    Checkpoint {
        state: state.clone(),
        generator: generator.save_state(),
    }
    .write(path)?;
    Ok(Some(path.clone()))
}

/// Runs iterations `state.iteration + 1 ..= cfg.iterations`.
///
/// Pass `None` to start fresh from `cfg.seed`, or a checkpointed state (with
/// the generator already restored) to resume.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    cfg: &RunConfig,
    spec: &TaskSpec,
    train: &[LabeledExample],
    valid: &[LabeledExample],
    generator: &mut dyn PromptGenerator,
    evaluator: &dyn Evaluator,
    start: Option<RunState>,
    opts: &RunOptions,
) -> Result<RunOutcome, TrainingError> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(TrainingError::InvalidConfig(problems));
    }
    if train.is_empty() {
        return Err(TrainingError::EmptyDataset("training"));
    }
    if valid.is_empty() {
        return Err(TrainingError::EmptyDataset("validation"));
    }
    let valid = &valid[..cfg.validation_cap.unwrap_or(valid.len()).min(valid.len())];
    let k = cfg.batch_size.min(train.len());

    let mut state = start.unwrap_or_else(|| RunState::new(cfg.seed));
    let mut timings = Vec::new();

    while state.iteration < cfg.iterations {
        let i = state.iteration + 1;
        let abort = |cause: AbortCause, state: &RunState, generator: &dyn PromptGenerator| {
            match save(opts, state, generator) {
                Ok(checkpoint) => TrainingError::Aborted {
                    iteration: i,
                    cause,
                    checkpoint,
                },
                Err(e) => e,
            }
        };

        let mut rng = state.rng.clone();
        let mut batch_idx = index::sample(&mut rng, train.len(), k).into_vec();
        batch_idx.sort_unstable();
        let batch: Vec<LabeledExample> = batch_idx.iter().map(|&j| train[j].clone()).collect();

        let mut rollouts: Vec<Rollout> = Vec::with_capacity(cfg.group_size);
        for _ in 0..cfg.group_size {
            match generator.sample(&mut rng) {
                Ok(r) => rollouts.push(r),
                Err(e) => return Err(abort(e.into(), &state, generator)),
            }
        }

        let mut cache: HashMap<String, (EvalSummary, usize)> = HashMap::new();
        let mut group = Vec::with_capacity(cfg.group_size);
        let mut entries = Vec::with_capacity(cfg.group_size);
        for r in rollouts {
            let (summary, failures) = match r.prompt() {
                None => (EvalSummary::default(), 0),
                Some(p) => match cache.get(p) {
                    Some(hit) => *hit,
                    None => match reward::score_prompt_on_batch(p, &batch, spec, evaluator) {
                        Ok(score) => {
                            let v = (score.summary, score.failures);
                            cache.insert(p.to_string(), v);
                            v
                        }
                        Err(e) => return Err(abort(e.into(), &state, generator)),
                    },
                },
            };
            let breakdown = reward::total_reward(&r.output, summary, cfg);
            entries.push(GroupEntry {
                choices: r.choices.as_ref().map(|c| c.0.clone()),
                emission: r.choices.is_none().then(|| r.output.raw.clone()),
                parse_ok: r.output.parse_ok,
                shots: r.prompt().map_or(0, count_demonstrations),
                reward: breakdown,
                eval_failures: failures,
            });
            group.push((r, breakdown.total));
        }

        let step = match generator.update(&group, cfg) {
            Ok(s) => s,
            Err(e) => return Err(abort(e.into(), &state, generator)),
        };

        let mut selection = None;
        let mut best = state.best.clone();
        if i.is_multiple_of(cfg.selection_period) {
            let before = generator.fingerprint();
            let picked = match select_best_prompt(&*generator, valid, spec, evaluator, cfg.n_test, &best, &mut rng, i) {
                Ok(s) => s,
                Err(cause) => return Err(abort(cause, &state, generator)),
            };
            let after = generator.fingerprint();
            best = picked.best;
            selection = Some(SelectionEvent {
                scores: picked.scores,
                chosen: picked.chosen,
                best_score: best.score,
                params_before: before,
                params_after: after,
            });
        }

        let n = group.len() as f64;
        state.history.push(IterationRecord {
            iteration: i,
            batch: batch_idx,
            mean_reward: group.iter().map(|(_, r)| r).sum::<f64>() / n,
            group: entries,
            step,
            best_score: best.score,
            selection: selection.clone(),
        });
        state.best = best;
        state.rng = rng;
        state.iteration = i;
        timings.push(TimingRecord {
            iteration: i,
            unix_ms: now_ms(),
        });
        if selection.is_some() {
            save(opts, &state, generator)?;
        }
    }
    save(opts, &state, generator)?;
    Ok(RunOutcome { state, timings })
}

/// Mean of `values[i + 1 - window ..= i]` for every full window.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() + 1 - window);
    let mut sum: f64 = values[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out.push(sum / window as f64);
    }
    out
}
