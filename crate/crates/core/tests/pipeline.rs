mod common;

use std::path::Path;

use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

use promptrl_core::commands::{self, CommandError};
use promptrl_core::config::Config;
use promptrl_core::dataset::{self, DatasetError};
use promptrl_core::metrics::Scale;
use promptrl_core::model::{LabeledExample, TaskKind, TaskSpec};
use promptrl_core::policy::count_demonstrations;
use promptrl_core::training::IterationRecord;

use common::{data_dir, fixture_workspace};

const FEW_SHOT_PROMPT: &str = "Classify each movie-review sentence as positive or negative, considering context/nuance. Examples:
\u{201c}The acting was superb, and the plot was engaging.\u{201d} \u{2192} positive
\u{201c}The movie was so slow and boring that I almost fell asleep.\u{201d} \u{2192} negative
Return only positive or negative.";

fn task_config(kind: &str, data: &str, extra_task: &str, behavior: &str) -> String {
    format!(
        r#"
[run]
iterations = 60
group_size = 4
selection_period = 20
n_test = 3
batch_size = 4
seed = 11

[task]
kind = "{kind}"
{extra_task}
train = "{data}"
valid = "{data}"

[evaluator]
kind = "mock"
default = {{ behavior = "{behavior}" }}

[policy]
kind = "slot"
instructions = ["Answer the question.", "Read carefully and answer."]
max_shots = 2
bank_holdout = 3
"#
    )
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("task.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn read_history(path: &Path) -> Vec<IterationRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn train_and_rescore(kind: &str, data: &str, extra: &str, behavior: &str) -> (f64, f64, Scale) {
    let dir = fixture_workspace();
    let cfg = write_config(dir.path(), &task_config(kind, data, extra, behavior));
    let report = commands::cmd_train(&cfg, None, None).unwrap();
    assert_eq!(report.iterations, 60);
    let history = read_history(&report.outputs.history);
    assert_eq!(history.len(), 60);
    assert_eq!(history.last().unwrap().best_score, report.best.score);
    let rescored = commands::cmd_score(&report.outputs.best_prompt, &dir.path().join(data), &cfg).unwrap();
    (report.best.score, rescored.value, rescored.scale)
}

#[test]
fn exact_match_tasks_reach_full_accuracy_with_echo() {
    for (kind, data, extra) in [
        ("classification", "sst2_valid.jsonl", r#"labels = ["positive", "negative"]"#),
        ("multiple_choice", "multiple_choice.jsonl", r#"labels = ["a", "b", "c", "d"]"#),
        ("math", "math.jsonl", r#"metric = "exact_integer""#),
        ("math", "math.jsonl", ""),
    ] {
        let (best, rescored, scale) = train_and_rescore(kind, data, extra, "echo_gold");
        assert_eq!(best, 1.0, "{kind}");
        assert_eq!(rescored, best, "{kind}");
        assert_eq!(scale, Scale::Unit);
    }
}

#[test]
fn corrupted_answers_never_improve_on_the_initial_candidate() {
    let dir = fixture_workspace();
    let text = task_config("classification", "sst2_valid.jsonl", r#"labels = ["positive", "negative"]"#, "corrupt_gold");
    let report = commands::cmd_train(&write_config(dir.path(), &text), None, None).unwrap();
    assert_eq!(report.best.score, 0.0);
    assert_eq!(report.best.prompt, "");
    let history = read_history(&report.outputs.history);
    let events: Vec<_> = history.iter().filter_map(|r| r.selection.as_ref()).collect();
    assert_eq!(events.len(), 3);
    assert!(events.iter().all(|e| e.chosen.is_none() && e.scores.iter().all(|&s| s == 0.0)));
}

#[test]
fn generation_tasks_report_their_metric_scale() {
    let (best, rescored, scale) = train_and_rescore("summarization", "summarization.jsonl", "", "echo_gold");
    assert_eq!(scale, Scale::Unit);
    assert_eq!(best, 1.0);
    assert_eq!(rescored, best);

    let (best, rescored, scale) = train_and_rescore("simplification", "simplification.jsonl", "", "echo_gold");
    assert_eq!(scale, Scale::Percent);
    assert!(best > 0.0 && best <= 100.0);
    assert_eq!(rescored, best);
}

#[test]
fn few_shot_prompt_scores_one_under_the_synthetic_rulebook() {
    let dir = fixture_workspace();
    assert_eq!(count_demonstrations(FEW_SHOT_PROMPT), 2);
    let prompt = dir.path().join("prompt.txt");
    std::fs::write(&prompt, FEW_SHOT_PROMPT).unwrap();
    let cfg = dir.path().join("synthetic.toml");
    let score = commands::cmd_score(&prompt, &dir.path().join("sst2_valid.jsonl"), &cfg).unwrap();
    assert_eq!(score.value, 1.0);

    // without demonstrations the rulebook falls back to a reasoned answer
    std::fs::write(&prompt, "Classify each movie-review sentence. Return only positive or negative.").unwrap();
    let score = commands::cmd_score(&prompt, &dir.path().join("sst2_valid.jsonl"), &cfg).unwrap();
    assert_eq!(score.value, 0.0);
}

#[test]
fn cmd_score_matches_evaluate_prompt() {
    let dir = fixture_workspace();
    let cfg_path = dir.path().join("synthetic.toml");
    let prompt = dir.path().join("prompt.txt");
    std::fs::write(&prompt, FEW_SHOT_PROMPT).unwrap();
    let config = Config::load(&cfg_path).unwrap();
    let valid = config.load_valid().unwrap();
    let direct =
        promptrl_core::training::evaluate_prompt(FEW_SHOT_PROMPT, &valid, &config.spec, config.evaluator().as_ref())
            .unwrap();
    let via_command = commands::cmd_score(&prompt, &dir.path().join("sst2_valid.jsonl"), &cfg_path).unwrap();
    assert_eq!(direct, via_command);
}

#[test]
fn short_runs_never_select() {
    let dir = fixture_workspace();
    let text = std::fs::read_to_string(data_dir().join("synthetic.toml"))
        .unwrap()
        .replace("iterations = 2000", "iterations = 50");
    let report = commands::cmd_train(&write_config(dir.path(), &text), None, None).unwrap();
    assert_eq!(report.best.score, 0.0);
    assert_eq!(report.best.prompt, "");
    assert_eq!(std::fs::read_to_string(&report.outputs.best_prompt).unwrap(), "");
    assert!(read_history(&report.outputs.history).iter().all(|r| r.selection.is_none()));
}

#[test]
fn missing_dataset_is_named() {
    let dir = fixture_workspace();
    let text = std::fs::read_to_string(data_dir().join("synthetic.toml"))
        .unwrap()
        .replace("sst2_train.jsonl", "nowhere.jsonl");
    let err = commands::cmd_train(&write_config(dir.path(), &text), None, None).unwrap_err();
    assert!(matches!(err, CommandError::Dataset(DatasetError::Io { .. })), "{err:?}");
    assert!(err.to_string().contains("nowhere.jsonl"));
    assert_eq!(err.exit_code(), commands::EXIT_DATA);
}

#[test]
fn empty_prompt_file_is_rejected() {
    let dir = fixture_workspace();
    let prompt = dir.path().join("empty.txt");
    std::fs::write(&prompt, "  \n").unwrap();
    let err = commands::cmd_score(&prompt, &dir.path().join("sst2_valid.jsonl"), &dir.path().join("synthetic.toml"))
        .unwrap_err();
    assert!(matches!(err, CommandError::Input { .. }));
}

#[test]
fn unreachable_evaluator_aborts_with_a_checkpoint() {
    let dir = fixture_workspace();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let text = std::fs::read_to_string(data_dir().join("synthetic.toml")).unwrap();
    let start = text.find("[evaluator]").unwrap();
    let end = text.find("[policy]").unwrap();
    let remote = format!(
        "[evaluator]\nkind = \"remote\"\nendpoint = \"http://127.0.0.1:{port}/v1/chat/completions\"\nmodel = \"m\"\nmax_retries = 1\nbackoff_ms = 1\n\n"
    );
    let text = format!("{}{}{}", &text[..start], remote, &text[end..]);
    let cfg = write_config(dir.path(), &text);
    let err = commands::cmd_train(&cfg, None, None).unwrap_err();
    assert_eq!(err.exit_code(), commands::EXIT_TRANSPORT, "{err}");
    assert!(dir.path().join("runs").join("checkpoint.txt").exists());
}

#[test]
fn select_from_a_checkpoint() {
    let dir = fixture_workspace();
    let text = std::fs::read_to_string(data_dir().join("synthetic.toml"))
        .unwrap()
        .replace("iterations = 2000", "iterations = 300")
        .replace("n_test = 10", "n_test = 1");
    let cfg = write_config(dir.path(), &text);
    let report = commands::cmd_train(&cfg, None, None).unwrap();
    let picked = commands::cmd_select(&cfg, &report.outputs.checkpoint).unwrap();
    assert!(!picked.prompt.is_empty());
    assert!(picked.score == 0.0 || picked.score == 1.0);
    // selection is a pure read of the checkpoint
    let again = commands::cmd_select(&cfg, &report.outputs.checkpoint).unwrap();
    assert_eq!(picked, again);
}

fn example_strategy() -> impl Strategy<Value = LabeledExample> {
    ("[a-zA-Z0-9 ,.!?'\"\\\\\u{e9}\u{4e2d}\n\t]{1,40}", prop::bool::ANY)
        .prop_filter("input must not be blank", |(s, _)| !s.trim().is_empty())
        .prop_map(|(input, pos)| LabeledExample::new(input, if pos { "positive" } else { "negative" }))
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn datasets_round_trip(examples in prop::collection::vec(example_strategy(), 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        dataset::write_dataset(&path, &examples).unwrap();
        let spec = TaskSpec::classification(&["positive", "negative"]);
        prop_assert_eq!(dataset::load_dataset(&path, &spec).unwrap(), examples);
    }
}

#[test]
fn refs_are_only_for_simplification() {
    let spec = TaskSpec {
        kind: TaskKind::Summarization,
        ..TaskSpec::classification(&[])
    };
    let text = r#"{"input": "a", "gold": "b", "refs": ["c"]}"#;
    let err = dataset::parse_dataset(text, Path::new("x.jsonl"), &spec).unwrap_err();
    assert!(matches!(err, DatasetError::Invalid { line: 1, .. }));
}
