//! Scoring functions and answer-extraction protocols.
//!
//! Tokenization is deliberately simple and frozen: casefold, split on
//! whitespace, strip punctuation from both ends of each token. ROUGE uses no
//! stemming and no stopword removal.

mod answers;
mod rouge;
mod sari;

pub use answers::{extract_final_number, match_label, match_option_letter, NumberMode};
pub(crate) use answers::numbers_equal;
pub use rouge::{lcs_len, rouge_avg, rouge_l, rouge_n};
pub use sari::sari;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("SARI needs at least one reference")]
    NoReferences,
    #[error("length mismatch: {predictions} predictions vs {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("cannot score an empty list")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// Values in `[0, 1]`.
    Unit,
    /// Values in `[0, 100]`.
    Percent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    pub scale: Scale,
}

impl MetricScore {
    pub fn unit(value: f64) -> Self {
        MetricScore { value, scale: Scale::Unit }
    }

    pub fn percent(value: f64) -> Self {
        MetricScore { value, scale: Scale::Percent }
    }

    /// The value mapped onto `[0, 1]`.
    pub fn as_unit(&self) -> f64 {
        match self.scale {
            Scale::Unit => self.value,
            Scale::Percent => self.value / 100.0,
        }
    }
}

/// Lowercase tokens with no empty entries.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}' | '\u{2019}' | '\u{201c}' | '\u{201d}' | '\u{2013}' | '\u{2014}' | '\u{2026}' | '\u{00bf}' | '\u{00a1}'
        )
}

pub fn tokenize(text: &str) -> TokenSequence {
    TokenSequence(
        text.to_lowercase()
            .split_whitespace()
            .map(|t| t.trim_matches(is_punctuation))
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect(),
    )
}

/// Fraction of positions whose prediction is present and equals the gold label.
pub fn accuracy<S: AsRef<str>, G: AsRef<str>>(
    predictions: &[Option<S>],
    golds: &[G],
) -> Result<MetricScore, MetricError> {
    if predictions.len() != golds.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if golds.is_empty() {
        return Err(MetricError::Empty);
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref().is_some_and(|p| p.as_ref() == g.as_ref()))
        .count();
    Ok(MetricScore::unit(correct as f64 / golds.len() as f64))
}
