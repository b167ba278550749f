//! The slot-template prompt policy.
//!
//! A prompt is assembled from discrete slots: an instruction variant, a shot
//! count, and one demonstration choice per possible shot. Each slot holds one
//! logit per choice and is sampled independently from its softmax, so the
//! log-probability of a prompt and its gradient have closed forms.

use std::fmt::Write as _;
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const POLICY_MAGIC: &str = "promptrl-slot-policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("choice {index} out of range for slot '{slot}' with {len} choices")]
    ChoiceOutOfRange { slot: String, index: usize, len: usize },
    #[error("expected {expected} slot choices, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("template hole '{{{0}}}' does not name a slot")]
    UnknownHole(String),
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("policy checkpoint line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("unsupported policy checkpoint version: expected '{POLICY_MAGIC} v{POLICY_VERSION}', found '{found}'")]
    Version { found: String },
}

/// An (input, label) pair that can be embedded in a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub label: String,
}

impl Demonstration {
    pub fn new(input: impl Into<String>, label: impl Into<String>) -> Self {
        Demonstration {
            input: input.into(),
            label: label.into(),
        }
    }

    pub fn render(&self) -> String {
        format!("\"{}\" -> {}", self.input, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Instruction,
    ShotCount,
    /// Choice values index into the demonstration bank.
    Example,
}

impl SlotKind {
    fn as_str(self) -> &'static str {
        match self {
            SlotKind::Instruction => "instruction",
            SlotKind::ShotCount => "shot_count",
            SlotKind::Example => "example",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "instruction" => Some(SlotKind::Instruction),
            "shot_count" => Some(SlotKind::ShotCount),
            "example" => Some(SlotKind::Example),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
    pub choices: Vec<String>,
    pub logits: Vec<f64>,
}

impl Slot {
    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }
}

/// One chosen index per slot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotChoices(pub Vec<usize>);

/// Per-slot arrays shaped like the policy logits.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGradient(pub Vec<Vec<f64>>);

impl SlotGradient {
    pub fn zeros_like(params: &SlotPolicyParams) -> Self {
        SlotGradient(params.slots.iter().map(|s| vec![0.0; s.logits.len()]).collect())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &SlotGradient, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - lse
}

/// Logits for every slot plus the demonstration bank the example slots draw from.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPolicyParams {
    pub slots: Vec<Slot>,
    pub bank: Vec<Demonstration>,
}

impl SlotPolicyParams {
    /// A uniform policy over `instructions`, 0..=`max_shots` shots and `bank`.
    pub fn uniform(
        instructions: Vec<String>,
        bank: Vec<Demonstration>,
        max_shots: usize,
    ) -> Result<Self, PolicyError> {
        let mut slots = vec![
            Slot {
                name: "instruction".into(),
                kind: SlotKind::Instruction,
                logits: vec![0.0; instructions.len()],
                choices: instructions,
            },
            Slot {
                name: "shot_count".into(),
                kind: SlotKind::ShotCount,
                choices: (0..=max_shots).map(|k| k.to_string()).collect(),
                logits: vec![0.0; max_shots + 1],
            },
        ];
        for i in 1..=max_shots {
            slots.push(Slot {
                name: format!("shot_{i}"),
                kind: SlotKind::Example,
                choices: (0..bank.len()).map(|b| b.to_string()).collect(),
                logits: vec![0.0; bank.len()],
            });
        }
        let params = SlotPolicyParams { slots, bank };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let invalid = |m: String| Err(PolicyError::Invalid(m));
        let mut names = std::collections::HashSet::new();
        for slot in &self.slots {
            if slot.choices.is_empty() {
                return invalid(format!("slot '{}' has no choices", slot.name));
            }
            if slot.choices.len() != slot.logits.len() {
                return invalid(format!("slot '{}' has {} choices but {} logits", slot.name, slot.choices.len(), slot.logits.len()));
            }
            if slot.logits.iter().any(|l| !l.is_finite()) {
                return invalid(format!("slot '{}' has a non-finite logit", slot.name));
            }
            if slot.name.is_empty() || slot.name.contains(|c: char| c.is_whitespace() || c == '{' || c == '}') {
                return invalid(format!("bad slot name '{}'", slot.name));
            }
            if !names.insert(slot.name.as_str()) {
                return invalid(format!("duplicate slot name '{}'", slot.name));
            }
            if slot.kind == SlotKind::Example {
                for c in &slot.choices {
                    match c.parse::<usize>() {
                        Ok(i) if i < self.bank.len() => {}
                        _ => return invalid(format!("slot '{}' refers to missing bank entry '{c}'", slot.name)),
                    }
                }
            }
        }
        let shot_slots = self.slots.iter().filter(|s| s.kind == SlotKind::Example).count();
        let counts: Vec<&Slot> = self.slots.iter().filter(|s| s.kind == SlotKind::ShotCount).collect();
        match counts.as_slice() {
            [] if shot_slots == 0 => {}
            [count] => {
                let expected: Vec<String> = (0..=shot_slots).map(|k| k.to_string()).collect();
                if count.choices != expected {
                    return invalid(format!("shot_count choices must be 0..={shot_slots}"));
                }
            }
            _ => return invalid("exactly one shot_count slot is required when example slots exist".into()),
        }
        Ok(())
    }

    pub fn slot(&self, name: &str) -> Option<&Slot> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn num_logits(&self) -> usize {
        self.slots.iter().map(|s| s.logits.len()).sum()
    }

    pub fn logits_flat(&self) -> Vec<f64> {
        self.slots.iter().flat_map(|s| s.logits.iter().copied()).collect()
    }

    pub fn set_logits_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_logits(), "flat logit length mismatch");
        let mut it = values.iter();
        for slot in &mut self.slots {
            for l in &mut slot.logits {
                *l = *it.next().unwrap();
            }
        }
    }

    fn check(&self, choices: &SlotChoices) -> Result<(), PolicyError> {
        if choices.0.len() != self.slots.len() {
            return Err(PolicyError::ShapeMismatch {
                expected: self.slots.len(),
                got: choices.0.len(),
            });
        }
        for (slot, &index) in self.slots.iter().zip(&choices.0) {
            if index >= slot.choices.len() {
                return Err(PolicyError::ChoiceOutOfRange {
                    slot: slot.name.clone(),
                    index,
                    len: slot.choices.len(),
                });
            }
        }
        Ok(())
    }

    /// Number of demonstrations `choices` renders.
    pub fn shot_count(&self, choices: &SlotChoices) -> usize {
        self.slots
            .iter()
            .zip(&choices.0)
            .find(|(s, _)| s.kind == SlotKind::ShotCount)
            .map_or(0, |(s, &i)| s.choices[i].parse().unwrap_or(0))
    }

    /// Short human-readable account of a choice vector.
    pub fn describe(&self, choices: &SlotChoices) -> String {
        let mut out = String::new();
        for (slot, &i) in self.slots.iter().zip(&choices.0) {
            if !out.is_empty() {
                out.push_str("; ");
            }
            let _ = write!(out, "{}={}", slot.name, i);
        }
        out
    }

    /// Serializes to the versioned line-oriented checkpoint text.
    pub fn to_checkpoint(&self) -> String {
        let mut out = format!("{POLICY_MAGIC} v{POLICY_VERSION}\n");
        for demo in &self.bank {
            let _ = writeln!(out, "bank\t{}", serde_json::to_string(&(&demo.input, &demo.label)).unwrap());
        }
        for slot in &self.slots {
            let logits: Vec<String> = slot.logits.iter().map(|l| l.to_string()).collect();
            let _ = writeln!(
                out,
                "slot\t{}\t{}\t{}\t{}",
                slot.name,
                slot.kind.as_str(),
                serde_json::to_string(&slot.choices).unwrap(),
                logits.join(" ")
            );
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, PolicyError> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.trim_end()).unwrap_or("");
        if header != format!("{POLICY_MAGIC} v{POLICY_VERSION}") {
            return Err(PolicyError::Version { found: header.to_string() });
        }
        let mut params = SlotPolicyParams { slots: vec![], bank: vec![] };
        for (i, line) in lines {
            let line_no = i + 1;
            let err = |m: &str| PolicyError::Format { line: line_no, message: m.to_string() };
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["bank", json] => {
                    let (input, label): (String, String) =
                        serde_json::from_str(json).map_err(|e| err(&e.to_string()))?;
                    params.bank.push(Demonstration { input, label });
                }
                ["slot", name, kind, choices, logits] => {
                    let kind = SlotKind::parse(kind).ok_or_else(|| err("unknown slot kind"))?;
                    let choices: Vec<String> =
                        serde_json::from_str(choices).map_err(|e| err(&e.to_string()))?;
                    let logits = logits
                        .split(' ')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<f64>().map_err(|_| err("bad logit")))
                        .collect::<Result<Vec<_>, _>>()?;
                    params.slots.push(Slot {
                        name: name.to_string(),
                        kind,
                        choices,
                        logits,
                    });
                }
                _ => return Err(err("unrecognized record")),
            }
        }
        params.validate()?;
        Ok(params)
    }
}

/// Draws one choice per slot and returns the joint log-probability.
///
/// Example slots past the sampled shot count are still drawn so every sample
/// has the same support; rendering ignores them.
pub fn sample<R: Rng + ?Sized>(params: &SlotPolicyParams, rng: &mut R) -> (SlotChoices, f64) {
    let mut chosen = Vec::with_capacity(params.slots.len());
    for slot in &params.slots {
        let probs = softmax(&slot.logits);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = i;
                break;
            }
        }
        chosen.push(pick);
    }
    let choices = SlotChoices(chosen);
    let lp = joint_logprob(params, &choices);
    (choices, lp)
}

fn joint_logprob(params: &SlotPolicyParams, choices: &SlotChoices) -> f64 {
    params
        .slots
        .iter()
        .zip(&choices.0)
        .map(|(slot, &c)| log_softmax_at(&slot.logits, c))
        .sum()
}

pub fn logprob(params: &SlotPolicyParams, choices: &SlotChoices) -> Result<f64, PolicyError> {
    params.check(choices)?;
    Ok(joint_logprob(params, choices))
}

/// `d log pi / d logit[s][c] = 1{c chosen} - softmax(logits_s)[c]`
pub fn grad_logprob(params: &SlotPolicyParams, choices: &SlotChoices) -> Result<SlotGradient, PolicyError> {
    params.check(choices)?;
    Ok(SlotGradient(
        params
            .slots
            .iter()
            .zip(&choices.0)
            .map(|(slot, &chosen)| {
                let mut g: Vec<f64> = softmax(&slot.logits).into_iter().map(|p| -p).collect();
                g[chosen] += 1.0;
                g
            })
            .collect(),
    ))
}

/// The text around the slots: a template with `{slot_name}` holes and the
/// task's output suffix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub text: String,
    #[serde(default)]
    pub output_suffix: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>, output_suffix: impl Into<String>) -> Self {
        PromptTemplate {
            text: text.into(),
            output_suffix: output_suffix.into(),
        }
    }
}

fn hole_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z0-9_]+)\}").unwrap())
}

fn demo_line_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^\s*["\u{201c}].*["\u{201d}]\s*(->|\u{2192})\s*\S"#).unwrap())
}

/// Number of `"input" -> label` demonstration lines in a prompt.
pub fn count_demonstrations(prompt: &str) -> usize {
    prompt.lines().filter(|l| demo_line_pattern().is_match(l)).count()
}

/// Renders the prompt selected by `choices`: template with holes filled, an
/// `Examples:` block with the first `shot_count` chosen demonstrations, then
/// the output suffix.
pub fn render_prompt(
    template: &PromptTemplate,
    params: &SlotPolicyParams,
    choices: &SlotChoices,
) -> Result<String, PolicyError> {
    params.check(choices)?;
    let value_of = |slot: &Slot, index: usize| -> String {
        match slot.kind {
            SlotKind::Example => params.bank[slot.choices[index].parse::<usize>().unwrap()].render(),
            _ => slot.choices[index].clone(),
        }
    };

    let mut out = String::with_capacity(template.text.len() + 128);
    let mut last = 0;
    for caps in hole_pattern().captures_iter(&template.text) {
        let whole = caps.get(0).unwrap();
        let name = &caps[1];
        let (slot, &index) = params
            .slots
            .iter()
            .zip(&choices.0)
            .find(|(s, _)| s.name == name)
            .ok_or_else(|| PolicyError::UnknownHole(name.to_string()))?;
        out.push_str(&template.text[last..whole.start()]);
        out.push_str(&value_of(slot, index));
        last = whole.end();
    }
    out.push_str(&template.text[last..]);

    let shots = params.shot_count(choices);
    if shots > 0 {
        out.push_str("\nExamples:");
        let examples = params.slots.iter().zip(&choices.0).filter(|(s, _)| s.kind == SlotKind::Example);
        for (slot, &index) in examples.take(shots) {
            out.push('\n');
            out.push_str(&value_of(slot, index));
        }
    }
    if !template.output_suffix.trim().is_empty() {
        out.push('\n');
        out.push_str(template.output_suffix.trim());
    }
    Ok(out)
}
