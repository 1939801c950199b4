//! The generation contract between the rollout engine and a policy.
//!
//! A policy sees the whole interleaved context (prompts, views, its own
//! previous outputs) and returns one text turn. Three backings ship here:
//! [`ScriptedPolicy`] for tests and replay, [`RemotePolicy`] for an HTTP
//! inference endpoint, and [`ToyPolicy`], a small log-linear policy over
//! action templates used for closed-loop training experiments.

mod remote;
mod scripted;
pub mod toy;

pub use remote::{RemoteConfig, RemotePolicy};
pub use scripted::{Script, ScriptedPolicy};
pub use toy::{ToyAction, ToyConfig, ToyObservation, ToyPolicy, ToyPolicyParams};

use crate::prompt::{Prompt, PromptKind};
use crate::rollout::Trajectory;
use crate::videorep::ViewSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint answered with an unusable payload: {0}")]
    Protocol(String),
    #[error("script has no output for turn {turn}")]
    ScriptExhausted { turn: usize },
    #[error("not supported by this policy: {0}")]
    Unsupported(&'static str),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("trajectory is outside the policy's support: {0}")]
    NotInSupport(String),
}

impl PolicyError {
    /// Errors that may go away on a fresh attempt.
    pub fn is_transient(&self) -> bool {
        matches!(self, PolicyError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub repetition_penalty: f64,
    pub max_new_tokens: u32,
}

impl SamplingParams {
    /// Stochastic sampling used for training rollouts and evaluation retries.
    pub fn training() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.9,
            top_k: 50,
            repetition_penalty: 1.0,
            max_new_tokens: 1024,
        }
    }

    /// Greedy decoding.
    pub fn greedy() -> Self {
        Self {
            temperature: 0.0,
            ..Self::training()
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.temperature <= 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must be in (0, 1], got {}", self.top_p));
        }
        if !(self.repetition_penalty > 0.0) {
            return Err(format!("repetition_penalty must be > 0, got {}", self.repetition_penalty));
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be > 0".into());
        }
        Ok(())
    }
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self::training()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The environment: prompts and views.
    User,
    /// The policy's own earlier outputs.
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<ViewSpec>,
    /// Structured form of `text` for environment messages.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<Prompt>,
}

impl Message {
    pub fn user(prompt: Prompt, text: String, views: Vec<ViewSpec>) -> Self {
        Self {
            role: Role::User,
            text,
            views,
            prompt: Some(prompt),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
            views: Vec::new(),
            prompt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    /// Every view in `messages` samples this video.
    pub video_uri: String,
    pub messages: Vec<Message>,
    pub sampling: SamplingParams,
    pub seed: u64,
}

impl GenerationRequest {
    /// Number of outputs the policy has already produced in this context.
    pub fn turn_index(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }

    pub fn views(&self) -> impl Iterator<Item = &ViewSpec> {
        self.messages.iter().flat_map(|m| m.views.iter())
    }

    pub fn first_prompt(&self) -> Option<&Prompt> {
        self.messages.iter().find_map(|m| m.prompt.as_ref())
    }

    pub fn is_self_confirm(&self) -> bool {
        self.first_prompt()
            .is_some_and(|p| p.kind == PromptKind::SelfConfirm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    /// Sum of token log-probabilities of `text`, when reported.
    pub total_logprob: Option<f64>,
    pub token_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Scripted,
    Remote,
    Toy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub reports_logprobs: bool,
    pub scores_trajectories: bool,
}

pub trait Policy: Send + Sync {
    fn kind(&self) -> PolicyKind;

    fn capabilities(&self) -> Capabilities;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, PolicyError>;

    /// Log-probability of the policy's outputs in `trajectory` given the
    /// recorded contexts.
    fn score_trajectory(&self, trajectory: &Trajectory) -> Result<f64, PolicyError>;
}

/// Rough whitespace token count for policies that do not report one.
pub(crate) fn approx_tokens(text: &str) -> u32 {
    let n = text.split_whitespace().count();
    u32::try_from(n).unwrap_or(u32::MAX).max(u32::from(!text.trim().is_empty()))
}
