//! The tagged turn grammar exchanged between the engine and a policy.
//!
//! Every policy turn is one think block followed by exactly one action
//! block:
//!
//! ```text
//! <think>free-form reasoning</think><ground>START, END</ground>
//! <think>free-form reasoning</think><answer>B</answer>
//! ```
//!
//! `START`/`END` are 0-based frame indices into the coarse view. Tag names
//! are lowercase and case-sensitive; whitespace around tags, inside blocks,
//! and around the comma is ignored. Text outside the blocks is discarded.
//! Anything else (missing think, duplicate blocks, both actions, reversed or
//! out-of-range indices, unclosed tags) parses as [`TurnAction::Malformed`].
//! Parsing never fails.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const GROUND_OPEN: &str = "<ground>";
pub const GROUND_CLOSE: &str = "</ground>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const TAG_TOKENS: [&str; 6] = [
    THINK_OPEN,
    THINK_CLOSE,
    GROUND_OPEN,
    GROUND_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TagError {
    #[error("block text is empty after trimming")]
    Empty,
    #[error("block text contains the tag token {0:?}")]
    ContainsTag(&'static str),
    #[error("grounding [{start}, {end}] is invalid for {frames} coarse frames")]
    BadGrounding { start: i64, end: i64, frames: u32 },
    #[error("malformed turns cannot be rendered")]
    RenderMalformed,
}

fn check_block_text(text: &str) -> Result<String, TagError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(TagError::Empty);
    }
    if let Some(tok) = TAG_TOKENS.iter().find(|t| trimmed.contains(*t)) {
        return Err(TagError::ContainsTag(tok));
    }
    Ok(trimmed.to_string())
}

/// Content of a think block, stored trimmed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ThinkText(String);

impl ThinkText {
    pub fn new(text: impl AsRef<str>) -> Result<Self, TagError> {
        check_block_text(text.as_ref()).map(Self)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ThinkText {
    type Error = TagError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<ThinkText> for String {
    fn from(t: ThinkText) -> String {
        t.0
    }
}

/// A grounding request in coarse-view frame index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundAction {
    pub start_frame: u32,
    pub end_frame: u32,
}

impl GroundAction {
    /// Checks `0 <= start <= end <= coarse_frames - 1`.
    pub fn new(start: i64, end: i64, coarse_frames: u32) -> Result<Self, TagError> {
        let bad = TagError::BadGrounding {
            start,
            end,
            frames: coarse_frames,
        };
        if start < 0 || end < start || end >= i64::from(coarse_frames) {
            return Err(bad);
        }
        Ok(Self {
            start_frame: start as u32,
            end_frame: end as u32,
        })
    }

    pub fn is_valid_for(&self, coarse_frames: u32) -> bool {
        self.start_frame <= self.end_frame && self.end_frame < coarse_frames
    }
}

/// Content of an answer block plus its normalized option letter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerAction {
    pub text: String,
    /// First standalone capital letter in `text`, if any.
    pub option: Option<char>,
}

impl AnswerAction {
    pub fn new(text: impl AsRef<str>) -> Result<Self, TagError> {
        let text = check_block_text(text.as_ref())?;
        let option = normalize_option(&text);
        Ok(Self { text, option })
    }

    /// Whether the normalized letter matches `key` (compared case-insensitively).
    pub fn matches_key(&self, key: &str) -> bool {
        let mut chars = key.trim().chars();
        match (self.option, chars.next(), chars.next()) {
            (Some(opt), Some(k), None) => opt == k.to_ascii_uppercase(),
            _ => false,
        }
    }
}

/// Extracts the first option letter `A`..`Z` that is not part of a longer word.
///
/// `"B"`, `"(B)"`, `"B. red"` and `"Option B"` all yield `B`.
pub fn normalize_option(text: &str) -> Option<char> {
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if !c.is_ascii_uppercase() {
            continue;
        }
        let before_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let after_ok = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if before_ok && after_ok {
            return Some(c);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Grounding,
    Answering,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TurnAction {
    Grounding {
        think: ThinkText,
        ground: GroundAction,
    },
    Answering {
        think: ThinkText,
        answer: AnswerAction,
    },
    Malformed,
}

/// One policy output together with its parsed form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTurn {
    pub raw: String,
    #[serde(flatten)]
    pub action: TurnAction,
}

impl ParsedTurn {
    pub fn grounding(think: ThinkText, ground: GroundAction) -> Self {
        let action = TurnAction::Grounding { think, ground };
        let raw = render(&action).expect("grounding renders");
        Self { raw, action }
    }

    pub fn answering(think: ThinkText, answer: AnswerAction) -> Self {
        let action = TurnAction::Answering { think, answer };
        let raw = render(&action).expect("answering renders");
        Self { raw, action }
    }

    pub fn malformed(raw: impl Into<String>) -> Self {
        Self {
            raw: raw.into(),
            action: TurnAction::Malformed,
        }
    }

    pub fn kind(&self) -> TurnKind {
        match self.action {
            TurnAction::Grounding { .. } => TurnKind::Grounding,
            TurnAction::Answering { .. } => TurnKind::Answering,
            TurnAction::Malformed => TurnKind::Malformed,
        }
    }

    pub fn think(&self) -> Option<&ThinkText> {
        match &self.action {
            TurnAction::Grounding { think, .. } | TurnAction::Answering { think, .. } => {
                Some(think)
            }
            TurnAction::Malformed => None,
        }
    }

    pub fn ground(&self) -> Option<GroundAction> {
        match self.action {
            TurnAction::Grounding { ground, .. } => Some(ground),
            _ => None,
        }
    }

    pub fn answer(&self) -> Option<&AnswerAction> {
        match &self.action {
            TurnAction::Answering { answer, .. } => Some(answer),
            _ => None,
        }
    }
}

impl fmt::Display for TurnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TurnKind::Grounding => "grounding",
            TurnKind::Answering => "answering",
            TurnKind::Malformed => "malformed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockName {
    Think,
    Ground,
    Answer,
}

struct Block<'a> {
    name: BlockName,
    content: &'a str,
}

/// Splits `text` into tag blocks. `None` on any nesting or pairing error.
fn scan_blocks(text: &str) -> Option<Vec<Block<'_>>> {
    const OPENERS: [(&str, &str, BlockName); 3] = [
        (THINK_OPEN, THINK_CLOSE, BlockName::Think),
        (GROUND_OPEN, GROUND_CLOSE, BlockName::Ground),
        (ANSWER_OPEN, ANSWER_CLOSE, BlockName::Answer),
    ];
    let mut blocks = Vec::new();
    let mut rest = text;
    loop {
        let Some(lt) = rest.find('<') else {
            return Some(blocks);
        };
        let tail = &rest[lt..];
        if let Some(&(open, close, name)) = OPENERS.iter().find(|(o, _, _)| tail.starts_with(o)) {
            let body = &tail[open.len()..];
            // The next tag token of any kind must be our closer.
            let next_tag = TAG_TOKENS
                .iter()
                .filter_map(|t| body.find(t).map(|pos| (pos, *t)))
                .min_by_key(|(pos, _)| *pos)?;
            if next_tag.1 != close {
                return None;
            }
            blocks.push(Block {
                name,
                content: &body[..next_tag.0],
            });
            rest = &body[next_tag.0 + close.len()..];
        } else if TAG_TOKENS.iter().any(|t| tail.starts_with(t)) {
            // Stray closing tag.
            return None;
        } else {
            rest = &tail[1..];
        }
    }
}

fn parse_index(s: &str) -> Option<i64> {
    let s = s.trim();
    let (neg, digits) = match s.strip_prefix('-') {
        Some(d) => (true, d),
        None => (false, s),
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: i64 = digits.parse().ok()?;
    Some(if neg { -v } else { v })
}

fn parse_ground(content: &str, coarse_frames: u32) -> Option<GroundAction> {
    let mut parts = content.split(',');
    let start = parse_index(parts.next()?)?;
    let end = parse_index(parts.next()?)?;
    if parts.next().is_some() {
        return None;
    }
    GroundAction::new(start, end, coarse_frames).ok()
}

/// Parses one policy output against a coarse view of `coarse_frames` frames.
pub fn parse_turn_output(text: &str, coarse_frames: u32) -> ParsedTurn {
    let malformed = || ParsedTurn::malformed(text);
    let Some(blocks) = scan_blocks(text) else {
        return malformed();
    };
    let [think, action] = blocks.as_slice() else {
        return malformed();
    };
    if think.name != BlockName::Think {
        return malformed();
    }
    let Ok(think) = ThinkText::new(think.content) else {
        return malformed();
    };
    let action = match action.name {
        BlockName::Ground => match parse_ground(action.content, coarse_frames) {
            Some(ground) => TurnAction::Grounding { think, ground },
            None => return malformed(),
        },
        BlockName::Answer => match AnswerAction::new(action.content) {
            Ok(answer) => TurnAction::Answering { think, answer },
            Err(_) => return malformed(),
        },
        BlockName::Think => return malformed(),
    };
    ParsedTurn {
        raw: text.to_string(),
        action,
    }
}

/// Lenient answer extraction used for self-confirmation replies: a single
/// answer block, no ground block, think block optional.
pub fn extract_answer(text: &str) -> Option<AnswerAction> {
    let blocks = scan_blocks(text)?;
    let mut answers = blocks.iter().filter(|b| b.name == BlockName::Answer);
    let answer = answers.next()?;
    if answers.next().is_some() || blocks.iter().any(|b| b.name == BlockName::Ground) {
        return None;
    }
    AnswerAction::new(answer.content).ok()
}

fn render(action: &TurnAction) -> Result<String, TagError> {
    match action {
        TurnAction::Grounding { think, ground } => Ok(format!(
            "{THINK_OPEN}{}{THINK_CLOSE}{GROUND_OPEN}{}, {}{GROUND_CLOSE}",
            think.as_str(),
            ground.start_frame,
            ground.end_frame
        )),
        TurnAction::Answering { think, answer } => Ok(format!(
            "{THINK_OPEN}{}{THINK_CLOSE}{ANSWER_OPEN}{}{ANSWER_CLOSE}",
            think.as_str(),
            answer.text
        )),
        TurnAction::Malformed => Err(TagError::RenderMalformed),
    }
}

/// Canonical text for a well-formed turn.
pub fn render_action(turn: &ParsedTurn) -> Result<String, TagError> {
    render(&turn.action)
}
