use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{evaluator_query, Evaluator, GatewayError};
use crate::model::LabeledExample;

/// Environment variable read for the bearer token when the config does not
/// name another one.
pub const API_KEY_ENV: &str = "PROMPTRL_API_KEY";

/// One chat-completions call.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub endpoint: String,
    pub model_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
}

impl ChatRequest {
    fn validate(&self) -> Result<(), GatewayError> {
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.endpoint.is_empty() {
            return Err(GatewayError::InvalidRequest("no endpoint configured".into()));
        }
        Ok(())
    }

    /// The JSON body sent on the wire.
    pub fn body(&self) -> ChatCompletionRequest {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &self.system {
            messages.push(ChatMessage {
                role: "system".into(),
                content: system.clone(),
            });
        }
        messages.push(ChatMessage {
            role: "user".into(),
            content: self.user.clone(),
        });
        ChatCompletionRequest {
            model: self.model_name.clone(),
            messages,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            stream: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatCompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stream: bool,
}

#[derive(Debug, Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    released: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n.max(1)),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.released.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.released.notify_one();
    }
}

enum Failure {
    Retryable(GatewayError),
    Fatal(GatewayError),
}

/// Blocking OpenAI-compatible chat-completions client with retries.
#[derive(Debug)]
pub struct RemoteClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    backoff_base: Duration,
    permits: Permits,
}

impl RemoteClient {
    pub fn new(api_key: Option<String>, backoff_base: Duration, max_in_flight: usize) -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        RemoteClient {
            agent: ureq::Agent::new_with_config(config),
            api_key,
            backoff_base,
            permits: Permits::new(max_in_flight),
        }
    }

    fn attempt(&self, req: &ChatRequest, attempt: u32) -> Result<String, Failure> {
        let mut builder = self
            .agent
            .post(&req.endpoint)
            .config()
            .timeout_global(Some(req.timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match builder.send_json(req.body()) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Retryable(GatewayError::Timeout { attempts: attempt }))
            }
            Err(e) => {
                return Err(Failure::Retryable(GatewayError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                }))
            }
        };
        let status = response.status().as_u16();
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Retryable(GatewayError::Timeout { attempts: attempt }))
            }
            Err(e) => {
                return Err(Failure::Retryable(GatewayError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                }))
            }
        };
        if status >= 500 || status == 429 {
            return Err(Failure::Retryable(GatewayError::Transport {
                attempts: attempt,
                message: format!("HTTP {status}: {body}"),
            }));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(GatewayError::Rejected {
                status,
                attempts: attempt,
                body,
            }));
        }
        let parsed: ChatCompletionResponse = serde_json::from_str(&body).map_err(|e| {
            Failure::Fatal(GatewayError::MalformedResponse {
                attempts: attempt,
                message: e.to_string(),
            })
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                Failure::Fatal(GatewayError::MalformedResponse {
                    attempts: attempt,
                    message: "no choices[0].message.content".into(),
                })
            })
    }

    /// Sends `req`, retrying transport failures, timeouts, 429 and 5xx with
    /// exponential backoff up to `req.max_retries` extra attempts.
    pub fn complete(&self, req: &ChatRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let _permit = self.permits.acquire();
        let max_attempts = req.max_retries + 1;
        let mut attempt = 1;
        loop {
            match self.attempt(req, attempt) {
                Ok(text) => return Ok(Completion { text, attempts: attempt }),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(e)) if attempt >= max_attempts => return Err(e),
                Err(Failure::Retryable(_)) => {
                    thread::sleep(self.backoff_base.saturating_mul(1 << (attempt - 1).min(16)));
                    attempt += 1;
                }
            }
        }
    }
}

fn default_max_tokens() -> u32 {
    256
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    3
}
fn default_parallelism() -> usize {
    8
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_api_key_env() -> String {
    API_KEY_ENV.to_string()
}

/// Connection settings for a remote model, as read from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSettings {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

impl RemoteSettings {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteSettings {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            max_tokens: default_max_tokens(),
            temperature: 0.0,
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            parallelism: default_parallelism(),
            backoff_ms: default_backoff_ms(),
            system_prompt: None,
        }
    }

    pub fn client(&self) -> RemoteClient {
        let api_key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
        RemoteClient::new(api_key, Duration::from_millis(self.backoff_ms), self.parallelism)
    }

    pub fn request(&self, system: Option<String>, user: String) -> ChatRequest {
        ChatRequest {
            system,
            user,
            max_tokens: self.max_tokens,
            temperature: self.temperature,
            endpoint: self.endpoint.clone(),
            model_name: self.model.clone(),
            timeout: Duration::from_secs_f64(self.timeout_secs.max(0.001)),
            max_retries: self.max_retries,
        }
    }
}

/// The evaluation model behind an OpenAI-compatible endpoint.
#[derive(Debug)]
pub struct RemoteEvaluator {
    client: RemoteClient,
    settings: RemoteSettings,
}

impl RemoteEvaluator {
    pub fn new(settings: RemoteSettings) -> Self {
        RemoteEvaluator {
            client: settings.client(),
            settings,
        }
    }
}

impl Evaluator for RemoteEvaluator {
    fn evaluate(&self, prompt: &str, example: &LabeledExample) -> Result<String, GatewayError> {
        let req = self.settings.request(
            self.settings.system_prompt.clone(),
            evaluator_query(prompt, &example.input),
        );
        self.client.complete(&req).map(|c| c.text)
    }

    fn parallelism(&self) -> usize {
        self.settings.parallelism.max(1)
    }
}
