use serde::{Deserialize, Serialize};

use super::{Evaluator, GatewayError};
use crate::model::LabeledExample;
use crate::policy::count_demonstrations;

/// Conditions a rule checks. All present conditions must hold; an empty
/// predicate matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulePredicate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_shots: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_contains: Option<String>,
}

impl RulePredicate {
    pub fn matches(&self, prompt: &str, input: &str) -> bool {
        self.prompt_contains.as_deref().is_none_or(|s| prompt.contains(s))
            && self.input_contains.as_deref().is_none_or(|s| input.contains(s))
            && self.min_shots.is_none_or(|k| count_demonstrations(prompt) >= k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum Behavior {
    EchoGold,
    FixedText { text: String },
    /// A deterministic wrong answer: the next label, gold + 1 for numbers,
    /// or the gold words reversed.
    CorruptGold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(flatten)]
    pub when: RulePredicate,
    #[serde(flatten)]
    pub then: Behavior,
}

/// Ordered rules, first match wins, with a fallback behavior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRulebook {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    pub default: Behavior,
    /// Label set used by `CorruptGold`.
    #[serde(default)]
    pub labels: Vec<String>,
}

impl MockRulebook {
    pub fn new(default: Behavior) -> Self {
        MockRulebook {
            rules: Vec::new(),
            default,
            labels: Vec::new(),
        }
    }

    pub fn with_rule(mut self, when: RulePredicate, then: Behavior) -> Self {
        self.rules.push(MockRule { when, then });
        self
    }

    pub fn with_labels(mut self, labels: &[String]) -> Self {
        self.labels = labels.to_vec();
        self
    }
}

fn corrupt(gold: &str, labels: &[String]) -> String {
    let trimmed = gold.trim();
    if let Ok(n) = trimmed.parse::<i64>() {
        return (n + 1).to_string();
    }
    if let Ok(x) = trimmed.parse::<f64>() {
        return (x + 1.0).to_string();
    }
    let g = trimmed.to_lowercase();
    if let Some(other) = labels.iter().find(|l| l.to_lowercase() != g) {
        return other.clone();
    }
    let mut words: Vec<&str> = trimmed.split_whitespace().collect();
    words.reverse();
    let reversed = words.join(" ");
    if reversed == trimmed {
        format!("not {trimmed}")
    } else {
        reversed
    }
}

pub fn mock_evaluate(rulebook: &MockRulebook, prompt: &str, input: &str, gold: &str) -> String {
    let behavior = rulebook
        .rules
        .iter()
        .find(|r| r.when.matches(prompt, input))
        .map_or(&rulebook.default, |r| &r.then);
    match behavior {
        Behavior::EchoGold => gold.to_string(),
        Behavior::FixedText { text } => text.clone(),
        Behavior::CorruptGold => corrupt(gold, &rulebook.labels),
    }
}

/// A rulebook wrapped as an [`Evaluator`].
#[derive(Debug, Clone)]
pub struct MockEvaluator {
    pub rulebook: MockRulebook,
}

impl MockEvaluator {
    pub fn new(rulebook: MockRulebook) -> Self {
        MockEvaluator { rulebook }
    }
}

impl Evaluator for MockEvaluator {
    fn evaluate(&self, prompt: &str, example: &LabeledExample) -> Result<String, GatewayError> {
        Ok(mock_evaluate(&self.rulebook, prompt, &example.input, &example.gold))
    }
}
