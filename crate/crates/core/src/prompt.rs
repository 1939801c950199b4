//! Versioned prompt templates for the initial, intermediate, and
//! self-confirmation turns.
//!
//! Changing any template text requires bumping [`TEMPLATE_VERSION`]; the
//! version is written into every trajectory log.

use serde::{Deserialize, Serialize};
use std::fmt::Write;

pub const TEMPLATE_VERSION: &str = "twg-prompts/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptKind {
    /// First environment message, sent with the coarse view.
    Initial,
    /// Sent with each fine view after a grounding turn.
    Intermediate { turn: u32, remaining: u32 },
    /// Asks for an answer from one clip alone.
    SelfConfirm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    #[serde(flatten)]
    pub kind: PromptKind,
    pub question: String,
    pub options: Vec<String>,
    /// Coarse frame count, used to state the valid grounding index range.
    pub coarse_frames: u32,
}

impl Prompt {
    pub fn new(kind: PromptKind, question: &str, options: &[String], coarse_frames: u32) -> Self {
        Self {
            kind,
            question: question.to_string(),
            options: options.to_vec(),
            coarse_frames,
        }
    }

    pub fn with_kind(&self, kind: PromptKind) -> Self {
        Self { kind, ..self.clone() }
    }
}

fn push_question(out: &mut String, prompt: &Prompt) {
    let _ = writeln!(out, "Question: {}", prompt.question.trim());
    if !prompt.options.is_empty() {
        out.push_str("Options:\n");
        for (i, opt) in prompt.options.iter().enumerate() {
            let letter = char::from(b'A' + (i as u8).min(25));
            let _ = writeln!(out, "({letter}) {}", opt.trim());
        }
    }
}

fn push_answer_format(out: &mut String) {
    out.push_str(
        "To answer, reply with your reasoning in <think></think> followed by \
         the option letter in <answer></answer>, for example \
         <think>reasoning</think><answer>A</answer>.\n",
    );
}

fn push_grounding_format(out: &mut String, coarse_frames: u32) {
    let last = coarse_frames.saturating_sub(1);
    let _ = writeln!(
        out,
        "If you need a closer look, reply with your reasoning in <think></think> \
         followed by a clip in <ground>start frame, end frame</ground>, using \
         frame indexes of the overview video from 0 to {last}. The clip will be \
         shown to you in more detail."
    );
}

pub fn render_prompt(prompt: &Prompt) -> String {
    let mut out = String::new();
    match prompt.kind {
        PromptKind::Initial => {
            let _ = writeln!(
                out,
                "You are given an overview of a video as {} frames indexed from 0 to {}.",
                prompt.coarse_frames,
                prompt.coarse_frames.saturating_sub(1)
            );
            push_question(&mut out, prompt);
            out.push_str("Think step by step. In each turn, either zoom into a clip or give the final answer.\n");
            push_grounding_format(&mut out, prompt.coarse_frames);
            push_answer_format(&mut out);
        }
        PromptKind::Intermediate { turn, remaining } => {
            let _ = writeln!(out, "Here is the clip you requested (turn {turn}).");
            push_question(&mut out, prompt);
            let _ = writeln!(out, "You have {remaining} turn(s) left.");
            push_grounding_format(&mut out, prompt.coarse_frames);
            push_answer_format(&mut out);
        }
        PromptKind::SelfConfirm => {
            out.push_str("Answer the question using only the video clip above.\n");
            push_question(&mut out, prompt);
            push_answer_format(&mut out);
        }
    }
    out
}
