//! Line-delimited JSON datasets: one `{"input", "gold", "refs"?}` object per line.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::{self, NumberMode};
use crate::model::{LabeledExample, TaskKind, TaskSpec};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: invalid record: {message}")]
    Invalid { path: PathBuf, line: usize, message: String },
    #[error("{path}: no records")]
    Empty { path: PathBuf },
}

/// Checks one example against the task. `Err` carries a human-readable reason.
pub fn validate_example(example: &LabeledExample, spec: &TaskSpec) -> Result<(), String> {
    if example.gold.trim().is_empty() {
        return Err("gold is empty".into());
    }
    if !example.extra_refs.is_empty() && spec.kind != TaskKind::Simplification {
        return Err("refs are only allowed for simplification tasks".into());
    }
    match spec.kind {
        TaskKind::Classification | TaskKind::MultipleChoice => {
            let gold = example.gold.trim().to_lowercase();
            if !spec.labels.contains(&gold) {
                return Err(format!("gold '{}' is not in the label set {:?}", example.gold, spec.labels));
            }
        }
        TaskKind::Math => {
            let mode = if spec.strict_math() { NumberMode::Strict } else { NumberMode::Lenient };
            let parsed = metrics::extract_final_number(&example.gold, mode);
            if parsed.is_none() || example.gold.split_whitespace().count() != 1 {
                return Err(format!("gold '{}' is not a number", example.gold));
            }
        }
        TaskKind::Summarization | TaskKind::Simplification => {}
    }
    Ok(())
}

/// Parses and validates every line; blank lines are skipped. Examples come
/// back in file order.
pub fn parse_dataset(text: &str, path: &Path, spec: &TaskSpec) -> Result<Vec<LabeledExample>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: LabeledExample = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        validate_example(&example, spec).map_err(|message| DatasetError::Invalid {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?;
        out.push(example);
    }
    if out.is_empty() {
        return Err(DatasetError::Empty { path: path.to_path_buf() });
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, spec: &TaskSpec) -> Result<Vec<LabeledExample>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_dataset(&text, path, spec)
}

pub fn write_dataset(path: &Path, examples: &[LabeledExample]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut f, ex)?;
        f.write_all(b"\n")?;
    }
    f.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MetricKind;

    fn sentiment() -> TaskSpec {
        TaskSpec::classification(&["positive", "negative"])
    }

    fn parse(text: &str, spec: &TaskSpec) -> Result<Vec<LabeledExample>, DatasetError> {
        parse_dataset(text, Path::new("d.jsonl"), spec)
    }

    #[test]
    fn order_preserved() {
        let text = r#"{"input":"a","gold":"positive"}
{"input":"b","gold":"negative"}

{"input":"c","gold":"Positive"}
"#;
        let got = parse(text, &sentiment()).unwrap();
        assert_eq!(got.iter().map(|e| e.input.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn label_outside_set_names_line() {
        let text = "{\"input\":\"a\",\"gold\":\"positive\"}\n{\"input\":\"b\",\"gold\":\"neutral\"}\n";
        let err = parse(text, &sentiment()).unwrap_err();
        assert!(matches!(err, DatasetError::Invalid { line: 2, .. }));
        assert!(err.to_string().contains("neutral"));
    }

    #[test]
    fn empty_and_malformed() {
        assert!(matches!(parse("\n\n", &sentiment()), Err(DatasetError::Empty { .. })));
        assert!(matches!(parse("{\"input\":1}", &sentiment()), Err(DatasetError::Parse { line: 1, .. })));
    }

    #[test]
    fn refs_and_numbers() {
        let math = TaskSpec {
            kind: TaskKind::Math,
            labels: vec![],
            metric: MetricKind::Accuracy,
            r_format: 1.0,
            r_alignment: 1.0,
            base_prompt: String::new(),
            output_suffix: String::new(),
        };
        assert!(parse(r#"{"input":"q","gold":"1,234"}"#, &math).is_ok());
        assert!(parse(r#"{"input":"q","gold":"many"}"#, &math).is_err());
        assert!(parse(r#"{"input":"q","gold":"positive","refs":["x"]}"#, &sentiment()).is_err());
    }
}
