//! The multi-turn think-with-grounding loop.
//!
//! The context starts with the coarse view and the initial prompt. Each turn
//! the policy sees the whole accumulated context and either grounds a clip
//! (which is appended as a fine view), answers, or produces something
//! unparseable. The loop stops on an answer, on a malformed turn, or after
//! `max_turns` policy calls.

use crate::data::Sample;
use crate::policy::{GenerationRequest, Message, Policy, PolicyError, SamplingParams};
use crate::prompt::{render_prompt, Prompt, PromptKind};
use crate::tagfmt::{parse_turn_output, AnswerAction, GroundAction, ParsedTurn, TurnKind};
use crate::videorep::{coarse_view, fine_view, ground_to_clip, Grain, ViewConfig, ViewError, ViewSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error("invalid rollout configuration: {0}")]
    Config(String),
    #[error("invalid sample {id}: {message}")]
    Sample { id: String, message: String },
}

impl RolloutError {
    pub fn is_transient(&self) -> bool {
        matches!(self, RolloutError::Policy(e) if e.is_transient())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub max_turns: u32,
    pub views: ViewConfig,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_turns: 3,
            views: ViewConfig::default(),
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<(), RolloutError> {
        if self.max_turns == 0 {
            return Err(RolloutError::Config("max_turns must be >= 1".into()));
        }
        self.views.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Answered,
    Malformed,
    MaxTurns,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// The environment prompt this output responds to.
    pub prompt_used: PromptKind,
    pub parsed: ParsedTurn,
    /// The fine view shown after a grounding turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injected_view: Option<ViewSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprob: Option<f64>,
    pub token_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub sample_id: String,
    pub video_uri: String,
    /// Prompt data shared by every turn; `kind` is always `Initial`.
    pub prompt: Prompt,
    pub initial_view: ViewSpec,
    /// Turn budget the loop ran with.
    pub max_turns: u32,
    pub turns: Vec<Turn>,
    pub stop: StopReason,
    pub final_answer: Option<AnswerAction>,
}

impl Trajectory {
    pub fn grounding_count(&self) -> usize {
        self.turns.iter().filter(|t| t.parsed.kind() == TurnKind::Grounding).count()
    }

    /// The last grounding action and the fine view it produced.
    pub fn last_grounding(&self) -> Option<(GroundAction, &ViewSpec)> {
        self.turns
            .iter()
            .rev()
            .find_map(|t| Some((t.parsed.ground()?, t.injected_view.as_ref()?)))
    }

    pub fn all_well_formed(&self) -> bool {
        self.turns.iter().all(|t| t.parsed.kind() != TurnKind::Malformed)
    }

    /// Summed per-turn log-probs, if every turn reported one.
    pub fn recorded_logprob(&self) -> Option<f64> {
        self.turns.iter().map(|t| t.logprob).sum()
    }

    /// The context the policy saw before producing turn `k` (0-based).
    pub fn context_before(&self, k: usize) -> Vec<Message> {
        let mut messages = vec![initial_message(&self.prompt, self.initial_view.clone())];
        for (i, turn) in self.turns.iter().take(k).enumerate() {
            messages.push(Message::assistant(turn.parsed.raw.clone()));
            if let Some(view) = &turn.injected_view {
                let prompt = self.prompt.with_kind(intermediate_kind(i + 1, self.max_turns));
                messages.push(Message::user(prompt.clone(), render_prompt(&prompt), vec![view.clone()]));
            }
        }
        messages
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let max_turns = self.max_turns;
        let n = self.turns.len();
        if n == 0 || n > max_turns as usize {
            return Err(format!("{n} turns with K = {max_turns}"));
        }
        if self.initial_view.grain != Grain::Coarse {
            return Err("initial view is not coarse".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            let last = i + 1 == n;
            let kind = t.parsed.kind();
            if !last && kind != TurnKind::Grounding {
                return Err(format!("turn {i} is {kind:?} but not last"));
            }
            let expected_prompt = if i == 0 {
                PromptKind::Initial
            } else {
                intermediate_kind(i, max_turns)
            };
            if t.prompt_used != expected_prompt {
                return Err(format!("turn {i} prompt {:?}", t.prompt_used));
            }
            match (&t.injected_view, kind) {
                (Some(v), TurnKind::Grounding) if v.grain == Grain::Fine => {}
                (None, TurnKind::Answering | TurnKind::Malformed) => {}
                _ => return Err(format!("turn {i} view does not match {kind:?}")),
            }
        }
        let last_kind = self.turns[n - 1].parsed.kind();
        let expected = match last_kind {
            TurnKind::Answering => StopReason::Answered,
            TurnKind::Malformed => StopReason::Malformed,
            TurnKind::Grounding if n == max_turns as usize => StopReason::MaxTurns,
            TurnKind::Grounding => return Err("grounding ended the loop before K".into()),
        };
        if self.stop != expected {
            return Err(format!("stop {:?}, expected {expected:?}", self.stop));
        }
        if self.final_answer.is_some() != (self.stop == StopReason::Answered) {
            return Err("final answer presence disagrees with stop reason".into());
        }
        if self.final_answer.as_ref() != self.turns[n - 1].parsed.answer() {
            return Err("final answer differs from the answering turn".into());
        }
        Ok(())
    }
}

fn intermediate_kind(turn: usize, max_turns: u32) -> PromptKind {
    let turn = turn as u32;
    PromptKind::Intermediate {
        turn,
        remaining: max_turns.saturating_sub(turn),
    }
}

fn initial_message(prompt: &Prompt, view: ViewSpec) -> Message {
    Message::user(prompt.clone(), render_prompt(prompt), vec![view])
}

/// Deterministic per-call seed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn initial_prompt(sample: &Sample, coarse_frames: u32) -> Prompt {
    Prompt::new(PromptKind::Initial, &sample.question, &sample.options, coarse_frames)
}

pub fn run_trajectory(
    policy: &dyn Policy,
    sample: &Sample,
    config: &RolloutConfig,
    sampling: &SamplingParams,
    seed: u64,
) -> Result<Trajectory, RolloutError> {
    config.validate()?;
    sample.validate().map_err(|message| RolloutError::Sample {
        id: sample.sample_id.clone(),
        message,
    })?;
    let views = config.views;
    let k_max = config.max_turns;
    let prompt = initial_prompt(sample, views.coarse_frames);
    let initial_view = coarse_view(&sample.video, views.coarse_frames, views.coarse_tokens)?;
    let mut messages = vec![initial_message(&prompt, initial_view.clone())];
    let mut turns: Vec<Turn> = Vec::new();
    let mut prompt_used = PromptKind::Initial;

    let stop = loop {
        if turns.len() == k_max as usize {
            break StopReason::MaxTurns;
        }
        let request = GenerationRequest {
            video_uri: sample.video.source_uri.clone(),
            messages: messages.clone(),
            sampling: *sampling,
            seed: mix_seed(seed, turns.len() as u64),
        };
        let response = policy.generate(&request)?;
        let parsed = parse_turn_output(&response.text, views.coarse_frames);
        let mut turn = Turn {
            prompt_used,
            parsed,
            injected_view: None,
            logprob: response.total_logprob,
            token_count: response.token_count,
        };
        messages.push(Message::assistant(response.text));
        match turn.parsed.kind() {
            TurnKind::Answering => {
                turns.push(turn);
                break StopReason::Answered;
            }
            TurnKind::Malformed => {
                turns.push(turn);
                break StopReason::Malformed;
            }
            TurnKind::Grounding => {
                let ground = turn.parsed.ground().expect("grounding turn");
                let clip = ground_to_clip(&sample.video, ground, views.coarse_frames)?;
                let view = fine_view(&clip, views.fine_frames, views.fine_tokens)?;
                turn.injected_view = Some(view.clone());
                turns.push(turn);
                prompt_used = intermediate_kind(turns.len(), k_max);
                let p = prompt.with_kind(prompt_used);
                messages.push(Message::user(p.clone(), render_prompt(&p), vec![view]));
            }
        }
    };
    let final_answer = match stop {
        StopReason::Answered => turns.last().and_then(|t| t.parsed.answer().cloned()),
        _ => None,
    };
    Ok(Trajectory {
        sample_id: sample.sample_id.clone(),
        video_uri: sample.video.source_uri.clone(),
        prompt,
        initial_view,
        max_turns: k_max,
        turns,
        stop,
        final_answer,
    })
}
