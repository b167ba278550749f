//! Prompt generators: the trainable slot policy and a sample-only remote LLM.

use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{GatewayError, RemoteClient, RemoteSettings};
use crate::grpo::{self, GroupSample, GrpoError, StepStats};
use crate::model::{GeneratorOutput, RunConfig};
use crate::policy::{self, PolicyError, PromptTemplate, SlotChoices, SlotPolicyParams};
use crate::tags;

/// System prompt given to an LLM prompt generator.
pub const GENERATOR_SYSTEM_PROMPT: &str = "A conversation between User and Assistant. The user asks a question, \
and the Assistant solves it. The assistant first thinks about the reasoning process in the mind and then provides \
the user with the answer. The reasoning process and answer are enclosed within <think> </think> and <answer> \
</answer> tags, respectively, i.e., <think> reasoning process here </think><answer> answer here </answer>";

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error("generator request failed: {0}")]
    Gateway(#[from] GatewayError),
    #[error("invalid generator state: {0}")]
    State(String),
}

/// One generator sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub output: GeneratorOutput,
    /// Slot choices behind the sample; `None` for generators without a
    /// tractable policy.
    pub choices: Option<SlotChoices>,
    pub logprob: f64,
}

impl Rollout {
    /// The extracted prompt, if the emission parsed.
    pub fn prompt(&self) -> Option<&str> {
        self.output.answer.as_deref().filter(|p| !p.trim().is_empty())
    }
}

pub trait PromptGenerator {
    fn sample(&self, rng: &mut dyn RngCore) -> Result<Rollout, GeneratorError>;

    /// Applies one update from a scored group. Returns `None` when the
    /// generator is not trainable here.
    fn update(
        &mut self,
        group: &[(Rollout, f64)],
        cfg: &RunConfig,
    ) -> Result<Option<StepStats>, GeneratorError>;

    /// Digest of all mutable state.
    fn fingerprint(&self) -> String;

    fn save_state(&self) -> String;

    fn load_state(&mut self, text: &str) -> Result<(), GeneratorError>;
}

fn sha_hex(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// The slot-template policy with a frozen reference copy for the KL term.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotGenerator {
    pub template: PromptTemplate,
    pub params: SlotPolicyParams,
    pub reference: SlotPolicyParams,
}

const REFERENCE_MARKER: &str = "--- reference ---";

impl SlotGenerator {
    /// The reference starts as a copy of `params`.
    pub fn new(template: PromptTemplate, params: SlotPolicyParams) -> Self {
        SlotGenerator {
            template,
            reference: params.clone(),
            params,
        }
    }

    /// The emission for a choice vector: the choice summary as reasoning and
    /// the rendered prompt as answer.
    pub fn emit(&self, choices: &SlotChoices) -> Result<GeneratorOutput, PolicyError> {
        let prompt = policy::render_prompt(&self.template, &self.params, choices)?;
        Ok(tags::extract_answer(&tags::render_emission(
            &self.params.describe(choices),
            &prompt,
        )))
    }
}

impl PromptGenerator for SlotGenerator {
    fn sample(&self, rng: &mut dyn RngCore) -> Result<Rollout, GeneratorError> {
        let (choices, logprob) = policy::sample(&self.params, rng);
        let output = self.emit(&choices)?;
        Ok(Rollout {
            output,
            choices: Some(choices),
            logprob,
        })
    }

    fn update(
        &mut self,
        group: &[(Rollout, f64)],
        cfg: &RunConfig,
    ) -> Result<Option<StepStats>, GeneratorError> {
        let samples = group
            .iter()
            .map(|(r, reward)| {
                let choices = r
                    .choices
                    .clone()
                    .ok_or_else(|| GeneratorError::State("rollout has no slot choices".into()))?;
                Ok(GroupSample {
                    choices,
                    logprob_old: r.logprob,
                    reward: *reward,
                })
            })
            .collect::<Result<Vec<_>, GeneratorError>>()?;
        let (next, stats) = grpo::grpo_step(&self.params, &samples, &self.reference, cfg)?;
        self.params = next;
        Ok(Some(stats))
    }

    fn fingerprint(&self) -> String {
        sha_hex(&[&self.params.to_checkpoint(), &self.reference.to_checkpoint()])
    }

    fn save_state(&self) -> String {
        format!(
            "{}{REFERENCE_MARKER}\n{}",
            self.params.to_checkpoint(),
            self.reference.to_checkpoint()
        )
    }

    fn load_state(&mut self, text: &str) -> Result<(), GeneratorError> {
        let (current, reference) = match text.split_once(&format!("{REFERENCE_MARKER}\n")) {
            Some((a, b)) => (a, Some(b)),
            None => (text, None),
        };
        let params = SlotPolicyParams::from_checkpoint(current)?;
        let reference = match reference {
            Some(r) => SlotPolicyParams::from_checkpoint(r)?,
            None => params.clone(),
        };
        if params.slots.len() != self.params.slots.len() {
            return Err(GeneratorError::State(format!(
                "checkpoint has {} slots, configured policy has {}",
                params.slots.len(),
                self.params.slots.len()
            )));
        }
        self.params = params;
        self.reference = reference;
        Ok(())
    }
}

/// The user message asking an LLM generator to refine `base_prompt`.
pub fn refinement_request(task_description: &str, base_prompt: &str) -> String {
    format!(
        "Your task is to refine a base prompt for another model that performs {task_description}. \
Improve the instructions to enhance the model's performance. The base prompt: {base_prompt}"
    )
}

/// An instruction-tuned LLM behind a chat-completions endpoint.
///
/// Only sampling happens here; groups and rewards are logged so an external
/// trainer can consume them.
pub struct RemoteGenerator {
    pub settings: RemoteSettings,
    pub user_message: String,
    client: RemoteClient,
}

impl RemoteGenerator {
    pub fn new(settings: RemoteSettings, user_message: String) -> Self {
        let client = settings.client();
        RemoteGenerator {
            settings,
            user_message,
            client,
        }
    }
}

impl PromptGenerator for RemoteGenerator {
    fn sample(&self, _rng: &mut dyn RngCore) -> Result<Rollout, GeneratorError> {
        let system = self
            .settings
            .system_prompt
            .clone()
            .unwrap_or_else(|| GENERATOR_SYSTEM_PROMPT.to_string());
        let req = self.settings.request(Some(system), self.user_message.clone());
        let completion = self.client.complete(&req)?;
        Ok(Rollout {
            output: tags::extract_answer(&completion.text),
            choices: None,
            logprob: 0.0,
        })
    }

    fn update(&mut self, _: &[(Rollout, f64)], _: &RunConfig) -> Result<Option<StepStats>, GeneratorError> {
        Ok(None)
    }

    fn fingerprint(&self) -> String {
        sha_hex(&[&self.user_message])
    }

    fn save_state(&self) -> String {
        String::new()
    }

    fn load_state(&mut self, _: &str) -> Result<(), GeneratorError> {
        Ok(())
    }
}
