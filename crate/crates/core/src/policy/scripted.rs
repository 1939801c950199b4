use super::{approx_tokens, Capabilities, GenerationRequest, GenerationResponse, Policy, PolicyError, PolicyKind};
use crate::rollout::Trajectory;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Outputs indexed by turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Script {
    /// Turn `k` returns entry `k`; running past the end is an error.
    Fixed(Vec<String>),
    /// Every turn returns the same text.
    Repeat(String),
}

impl Script {
    pub fn fixed<S: Into<String>>(outputs: impl IntoIterator<Item = S>) -> Self {
        Script::Fixed(outputs.into_iter().map(Into::into).collect())
    }

    fn at(&self, turn: usize) -> Option<&str> {
        match self {
            Script::Fixed(v) => v.get(turn).map(String::as_str),
            Script::Repeat(s) => Some(s),
        }
    }
}

/// Deterministic policy replaying fixed outputs.
///
/// Scripts are looked up by video URI, then by question text, then the
/// default. Self-confirmation requests use the self-confirm scripts with
/// the same lookup order.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedPolicy {
    pub default: Option<Script>,
    pub by_video: HashMap<String, Script>,
    pub by_question: HashMap<String, Script>,
    pub self_confirm: Option<Script>,
    pub self_confirm_by_video: HashMap<String, Script>,
}

impl ScriptedPolicy {
    pub fn new(script: Script) -> Self {
        Self {
            default: Some(script),
            ..Self::default()
        }
    }

    pub fn with_self_confirm(mut self, script: Script) -> Self {
        self.self_confirm = Some(script);
        self
    }

    pub fn with_video(mut self, uri: impl Into<String>, script: Script) -> Self {
        self.by_video.insert(uri.into(), script);
        self
    }

    pub fn with_self_confirm_video(mut self, uri: impl Into<String>, script: Script) -> Self {
        self.self_confirm_by_video.insert(uri.into(), script);
        self
    }

    fn script_for(&self, request: &GenerationRequest) -> Option<&Script> {
        if request.is_self_confirm() {
            return self
                .self_confirm_by_video
                .get(&request.video_uri)
                .or(self.self_confirm.as_ref());
        }
        self.by_video
            .get(&request.video_uri)
            .or_else(|| {
                request
                    .first_prompt()
                    .and_then(|p| self.by_question.get(&p.question))
            })
            .or(self.default.as_ref())
    }
}

impl Policy for ScriptedPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Scripted
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            reports_logprobs: true,
            scores_trajectories: true,
        }
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, PolicyError> {
        let turn = request.turn_index();
        let text = self
            .script_for(request)
            .and_then(|s| s.at(turn))
            .ok_or(PolicyError::ScriptExhausted { turn })?;
        Ok(GenerationResponse {
            text: text.to_string(),
            total_logprob: Some(0.0),
            token_count: approx_tokens(text),
        })
    }

    /// Scripts are deterministic, so every scripted output has probability one.
    fn score_trajectory(&self, _trajectory: &Trajectory) -> Result<f64, PolicyError> {
        Ok(0.0)
    }
}
