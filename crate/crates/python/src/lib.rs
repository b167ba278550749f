//! Python bindings for the prompt-optimization core.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use promptrl_core::commands::{self, CommandError};
use promptrl_core::gateway::{mock_evaluate as core_mock_evaluate, MockRulebook};
use promptrl_core::grpo;
use promptrl_core::metrics;
use promptrl_core::model::{GeneratorOutput, RunConfig as CoreRunConfig};
use promptrl_core::reward::{self, EvalSummary};
use promptrl_core::tags;

create_exception!(promptrl, PromptRlError, PyException);

fn command_err(e: CommandError) -> PyErr {
    PromptRlError::new_err(format!("{e} (exit code {})", e.exit_code()))
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Hyperparameters of a training run; defaults are the reference settings.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct RunConfig {
    inner: CoreRunConfig,
}

#[pymethods]
impl RunConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let mut inner = CoreRunConfig::default();
        if let Some(o) = overrides {
            let mut value = serde_json::to_value(&inner).map_err(value_err)?;
            for (k, v) in o.iter() {
                let key: String = k.extract()?;
                let json: String = Python::import(o.py(), "json")?.call_method1("dumps", (v,))?.extract()?;
                value[key.as_str()] = serde_json::from_str(&json).map_err(value_err)?;
            }
            inner = serde_json::from_value(value).map_err(value_err)?;
        }
        let problems = inner.validate();
        if !problems.is_empty() {
            return Err(PyValueError::new_err(problems.join("; ")));
        }
        Ok(RunConfig { inner })
    }

    #[getter]
    fn group_size(&self) -> usize {
        self.inner.group_size
    }
    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }
    #[getter]
    fn selection_period(&self) -> usize {
        self.inner.selection_period
    }
    #[getter]
    fn n_test(&self) -> usize {
        self.inner.n_test
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn r_token(&self) -> f64 {
        self.inner.r_token
    }
    #[getter]
    fn r_structure(&self) -> f64 {
        self.inner.r_structure
    }
    #[getter]
    fn learning_rate(&self) -> f64 {
        self.inner.learning_rate
    }
    #[getter]
    fn weight_decay(&self) -> f64 {
        self.inner.weight_decay
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("RunConfig({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// A parsed generator emission.
#[pyclass(name = "GeneratorOutput", get_all, frozen)]
struct PyGeneratorOutput {
    raw: String,
    think: Option<String>,
    answer: Option<String>,
    parse_ok: bool,
}

impl From<GeneratorOutput> for PyGeneratorOutput {
    fn from(o: GeneratorOutput) -> Self {
        PyGeneratorOutput {
            raw: o.raw,
            think: o.think,
            answer: o.answer,
            parse_ok: o.parse_ok,
        }
    }
}

#[pymethods]
impl PyGeneratorOutput {
    fn __repr__(&self) -> String {
        format!("GeneratorOutput(parse_ok={}, answer={:?})", self.parse_ok, self.answer)
    }
}

#[pyfunction]
fn count_tokens(raw: &str) -> HashMap<&'static str, usize> {
    tags::count_tokens(raw).iter().collect()
}

#[pyfunction]
#[pyo3(signature = (raw, r_token = 0.75))]
fn token_usage_reward(raw: &str, r_token: f64) -> f64 {
    tags::token_usage_reward(&tags::count_tokens(raw), r_token)
}

#[pyfunction]
#[pyo3(signature = (raw, r_structure = 0.75))]
fn structure_reward(raw: &str, r_structure: f64) -> f64 {
    tags::structure_reward(raw, r_structure)
}

#[pyfunction]
fn extract_answer(raw: &str) -> PyGeneratorOutput {
    tags::extract_answer(raw).into()
}

/// Total reward of an emission given the mean evaluation rewards of its prompt.
#[pyfunction]
#[pyo3(signature = (raw, format_reward, alignment_reward, config = None))]
fn total_reward(raw: &str, format_reward: f64, alignment_reward: f64, config: Option<RunConfig>) -> f64 {
    let cfg = config.map(|c| c.inner).unwrap_or_default();
    let out = tags::extract_answer(raw);
    let eval = if out.parse_ok {
        EvalSummary {
            format: format_reward,
            alignment: alignment_reward,
        }
    } else {
        EvalSummary::default()
    };
    reward::total_reward(&out, eval, &cfg).total
}

#[pyfunction]
fn rouge_n(candidate: &str, reference: &str, n: usize) -> PyResult<f64> {
    if n == 0 {
        return Err(PyValueError::new_err("n must be >= 1"));
    }
    Ok(metrics::rouge_n(&metrics::tokenize(candidate), &metrics::tokenize(reference), n).value)
}

#[pyfunction]
fn rouge_l(candidate: &str, reference: &str) -> f64 {
    metrics::rouge_l(&metrics::tokenize(candidate), &metrics::tokenize(reference)).value
}

#[pyfunction]
fn rouge_avg(candidate: &str, reference: &str) -> f64 {
    metrics::rouge_avg(candidate, reference).value
}

/// SARI on the 0-100 scale.
#[pyfunction]
fn sari(source: &str, candidate: &str, references: Vec<String>) -> PyResult<f64> {
    metrics::sari(source, candidate, &references).map(|s| s.value).map_err(value_err)
}

#[pyfunction]
fn match_label(output: &str, labels: Vec<String>) -> Option<String> {
    metrics::match_label(output, &labels).map(str::to_string)
}

#[pyfunction]
fn match_option_letter(output: &str) -> Option<char> {
    metrics::match_option_letter(output)
}

#[pyfunction]
#[pyo3(signature = (output, strict = false))]
fn extract_final_number(output: &str, strict: bool) -> Option<String> {
    let mode = if strict {
        metrics::NumberMode::Strict
    } else {
        metrics::NumberMode::Lenient
    };
    metrics::extract_final_number(output, mode)
}

#[pyfunction]
#[pyo3(signature = (rewards, std_floor = 1e-8))]
fn group_advantages(rewards: Vec<f64>, std_floor: f64) -> PyResult<Vec<f64>> {
    grpo::group_advantages(&rewards, std_floor).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (ratio, advantage, epsilon = 0.2))]
fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    grpo::clipped_term(ratio, advantage, epsilon)
}

#[pyfunction]
fn kl_estimate(logprob_ref: f64, logprob_new: f64) -> f64 {
    grpo::kl_estimate(logprob_ref, logprob_new)
}

/// Applies a TOML rulebook to one (prompt, input, gold) triple.
#[pyfunction]
fn mock_evaluate(rulebook_toml: &str, prompt: &str, input: &str, gold: &str) -> PyResult<String> {
    let rulebook: MockRulebook = toml::from_str(rulebook_toml).map_err(value_err)?;
    Ok(core_mock_evaluate(&rulebook, prompt, input, gold))
}

/// Runs training from a config file; returns the best prompt and its score.
#[pyfunction]
#[pyo3(signature = (config, resume = None, seed = None))]
fn train(py: Python<'_>, config: PathBuf, resume: Option<PathBuf>, seed: Option<u64>) -> PyResult<(String, f64)> {
    let report = py
        .detach(|| commands::cmd_train(&config, resume.as_deref(), seed))
        .map_err(command_err)?;
    Ok((report.best.prompt, report.best.score))
}

/// Task metric of the prompt stored in `prompt_file` on `data`.
#[pyfunction]
fn score(py: Python<'_>, prompt_file: PathBuf, data: PathBuf, config: PathBuf) -> PyResult<f64> {
    py.detach(|| commands::cmd_score(&prompt_file, &data, &config))
        .map(|s| s.value)
        .map_err(command_err)
}

#[pyfunction]
fn select(py: Python<'_>, config: PathBuf, checkpoint: PathBuf) -> PyResult<(String, f64)> {
    let best = py
        .detach(|| commands::cmd_select(&config, &checkpoint))
        .map_err(command_err)?;
    Ok((best.prompt, best.score))
}

#[pyfunction]
fn validate_config(config: PathBuf) -> PyResult<()> {
    commands::cmd_validate_config(&config).map(|_| ()).map_err(command_err)
}

#[pymodule]
fn promptrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PromptRlError", m.py().get_type::<PromptRlError>())?;
    m.add_class::<RunConfig>()?;
    m.add_class::<PyGeneratorOutput>()?;
    m.add_function(wrap_pyfunction!(count_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(token_usage_reward, m)?)?;
    m.add_function(wrap_pyfunction!(structure_reward, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer, m)?)?;
    m.add_function(wrap_pyfunction!(total_reward, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_n, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_avg, m)?)?;
    m.add_function(wrap_pyfunction!(sari, m)?)?;
    m.add_function(wrap_pyfunction!(match_label, m)?)?;
    m.add_function(wrap_pyfunction!(match_option_letter, m)?)?;
    m.add_function(wrap_pyfunction!(extract_final_number, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(clipped_term, m)?)?;
    m.add_function(wrap_pyfunction!(kl_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(mock_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    Ok(())
}
