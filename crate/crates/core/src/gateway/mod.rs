//! Access to the frozen evaluation model: a remote OpenAI-compatible client
//! and a deterministic rule-based mock.

mod mock;
mod remote;

pub use mock::{mock_evaluate, Behavior, MockEvaluator, MockRule, MockRulebook, RulePredicate};
pub use remote::{
    ChatCompletionRequest, ChatMessage, ChatRequest, Completion, RemoteClient, RemoteEvaluator,
    RemoteSettings, API_KEY_ENV,
};

use thiserror::Error;

use crate::model::LabeledExample;

/// Failures talking to an evaluator. Every variant carries the number of
/// attempts made.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("malformed response after {attempts} attempt(s): {message}")]
    MalformedResponse { attempts: u32, message: String },
    #[error("request rejected with HTTP {status} after {attempts} attempt(s): {body}")]
    Rejected { status: u16, attempts: u32, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    pub fn attempts(&self) -> u32 {
        match self {
            GatewayError::Transport { attempts, .. }
            | GatewayError::Timeout { attempts }
            | GatewayError::MalformedResponse { attempts, .. }
            | GatewayError::Rejected { attempts, .. } => *attempts,
            GatewayError::InvalidRequest(_) => 0,
        }
    }
}

/// Answers a task input under a candidate prompt.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, prompt: &str, example: &LabeledExample) -> Result<String, GatewayError>;

    /// Upper bound on concurrent `evaluate` calls worth issuing.
    fn parallelism(&self) -> usize {
        1
    }
}

/// The user message sent to the evaluation model.
pub fn evaluator_query(prompt: &str, input: &str) -> String {
    format!("{prompt}\n\nInput: {input}")
}
