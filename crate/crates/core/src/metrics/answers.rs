//! Answer-extraction protocols for evaluator outputs.

use std::sync::OnceLock;

use regex::Regex;

/// Trims and casefolds `output`; returns the label it equals, if any.
///
/// Only a whole-output match counts: "it is positive" is not a label.
pub fn match_label<'a, S: AsRef<str>>(output: &str, labels: &'a [S]) -> Option<&'a str> {
    let normalized = output.trim().to_lowercase();
    labels
        .iter()
        .map(AsRef::as_ref)
        .find(|label| label.trim().to_lowercase() == normalized)
}

/// Accepts a lone option letter A-E, optionally followed by `.`, `)` or `:`.
pub fn match_option_letter(output: &str) -> Option<char> {
    let trimmed = output.trim();
    let mut chars = trimmed.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    if !('A'..='E').contains(&letter) {
        return None;
    }
    match chars.as_str() {
        "" | "." | ")" | ":" => Some(letter),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NumberMode {
    /// The last numeric literal anywhere in the text.
    #[default]
    Lenient,
    /// The whole trimmed output must be one integer literal.
    Strict,
}

fn number_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?[$€£¥]?\d+(?:,\d{3})*(?:\.\d+)?").unwrap())
}

fn integer_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[-+]?\d+$").unwrap())
}

/// Canonical form: no grouping commas or currency, no leading zeros, no
/// trailing fractional zeros, no negative zero.
fn normalize_number(literal: &str) -> String {
    let negative = literal.starts_with('-');
    let digits: String = literal
        .chars()
        .filter(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f.trim_end_matches('0')),
        None => (digits.as_str(), ""),
    };
    let int_part = int_part.trim_start_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let mut out = String::new();
    if negative && !(int_part == "0" && frac_part.is_empty()) {
        out.push('-');
    }
    out.push_str(int_part);
    if !frac_part.is_empty() {
        out.push('.');
        out.push_str(frac_part);
    }
    out
}

pub fn extract_final_number(output: &str, mode: NumberMode) -> Option<String> {
    match mode {
        NumberMode::Strict => {
            let trimmed = output.trim();
            integer_pattern()
                .is_match(trimmed)
                .then(|| normalize_number(trimmed))
        }
        NumberMode::Lenient => {
            let m = number_pattern().find_iter(output).last()?;
            let mut literal = m.as_str();
            // a hyphen glued to a preceding word or digit is not a sign
            if literal.starts_with('-')
                && output[..m.start()]
                    .chars()
                    .next_back()
                    .is_some_and(char::is_alphanumeric)
            {
                literal = &literal[1..];
            }
            Some(normalize_number(literal))
        }
    }
}

/// Numeric equality of two literals after normalization.
pub(crate) fn numbers_equal(a: &str, b: &str) -> bool {
    let has_digit = |s: &str| s.chars().any(|c| c.is_ascii_digit());
    if !has_digit(a) || !has_digit(b) {
        return false;
    }
    match (normalize_number(a).parse::<f64>(), normalize_number(b).parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}
