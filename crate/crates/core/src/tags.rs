//! The `<think>…</think><answer>…</answer>` emission protocol and the
//! generator-side rewards derived from it.

use crate::model::GeneratorOutput;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// The four required delimiters, in protocol order.
pub const DELIMITERS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// Literal occurrence counts of each delimiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TagInventory {
    counts: [usize; 4],
}

impl TagInventory {
    pub fn from_counts(counts: [usize; 4]) -> Self {
        TagInventory { counts }
    }

    /// Count for `tag`, or `None` when it is not one of the delimiters.
    pub fn count(&self, tag: &str) -> Option<usize> {
        DELIMITERS.iter().position(|d| *d == tag).map(|i| self.counts[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, usize)> + '_ {
        DELIMITERS.iter().copied().zip(self.counts.iter().copied())
    }

    /// Number of delimiters that appear exactly once.
    pub fn exactly_once(&self) -> usize {
        self.counts.iter().filter(|&&c| c == 1).count()
    }
}

pub fn count_tokens(raw: &str) -> TagInventory {
    let mut counts = [0; 4];
    for (slot, tag) in counts.iter_mut().zip(DELIMITERS) {
        *slot = raw.matches(tag).count();
    }
    TagInventory { counts }
}

/// `r_token / 4` for every delimiter used exactly once.
pub fn token_usage_reward(inv: &TagInventory, r_token: f64) -> f64 {
    r_token / DELIMITERS.len() as f64 * inv.exactly_once() as f64
}

fn contains_delimiter(s: &str) -> bool {
    DELIMITERS.iter().any(|d| s.contains(d))
}

/// Splits a well-formed emission into its think and answer segments.
///
/// The trimmed text must be `<think>T</think>` optional whitespace
/// `<answer>A</answer>` with no delimiter inside `T` or `A`.
fn split_segments(raw: &str) -> Option<(&str, &str)> {
    let rest = raw.trim().strip_prefix(THINK_OPEN)?;
    let close = rest.find(THINK_CLOSE)?;
    let think = &rest[..close];
    let rest = rest[close + THINK_CLOSE.len()..].trim_start();
    let answer = rest.strip_prefix(ANSWER_OPEN)?.strip_suffix(ANSWER_CLOSE)?;
    if contains_delimiter(think) || contains_delimiter(answer) {
        return None;
    }
    Some((think, answer))
}

pub fn structure_reward(raw: &str, r_structure: f64) -> f64 {
    if split_segments(raw).is_some() {
        r_structure
    } else {
        0.0
    }
}

/// Parses an emission. Failure is reported through `parse_ok`, never as an error.
pub fn extract_answer(raw: &str) -> GeneratorOutput {
    match split_segments(raw) {
        Some((think, answer)) => GeneratorOutput {
            raw: raw.to_string(),
            think: Some(think.to_string()),
            answer: Some(answer.to_string()),
            parse_ok: true,
        },
        None => GeneratorOutput {
            raw: raw.to_string(),
            think: None,
            answer: None,
            parse_ok: false,
        },
    }
}

/// Produces a well-formed emission from its two segments.
pub fn render_emission(think: &str, answer: &str) -> String {
    format!("{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}")
}
