//! Needle-in-a-haystack corpora for closed-loop experiments.
//!
//! Each video is a timeline of frame attachments. One short "needle" event
//! carries the answer letter. Its handle `needle:<L>:<T>` shows a visible
//! marker at any token budget but the letter `L` is only legible when the
//! view grants at least `T` tokens per frame. Optional look-alike details
//! (`detail:<L>:<T>`) are invisible below `T` tokens and show a wrong
//! letter when zoomed into. `bg` is empty background.
//!
//! With the default geometry (64 coarse frames, four grounding windows of
//! 16 coarse segments, 16 fine frames) every event spans the midpoint of one
//! coarse segment, so both a coarse view and a fine view of the enclosing
//! window sample it.

use super::{Sample, Source};
use crate::rewards::Interval;
use crate::videorep::{FrameAttachment, VideoMeta};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

const OPTION_WORDS: [&str; 8] = ["red", "green", "blue", "yellow", "purple", "orange", "white", "black"];

/// Parsed form of a synthetic attachment handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventHandle {
    Background,
    Needle { letter: char, min_tokens: u32 },
    Detail { letter: char, min_tokens: u32 },
}

/// What a frame shows at a given token budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Percept {
    Nothing,
    Marker,
    Letter(char),
}

impl EventHandle {
    pub fn perceive(&self, tokens_per_frame: u32) -> Percept {
        match *self {
            EventHandle::Background => Percept::Nothing,
            EventHandle::Needle { letter, min_tokens } => {
                if tokens_per_frame >= min_tokens {
                    Percept::Letter(letter)
                } else {
                    Percept::Marker
                }
            }
            EventHandle::Detail { letter, min_tokens } => {
                if tokens_per_frame >= min_tokens {
                    Percept::Letter(letter)
                } else {
                    Percept::Nothing
                }
            }
        }
    }
}

impl fmt::Display for EventHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventHandle::Background => f.write_str("bg"),
            EventHandle::Needle { letter, min_tokens } => write!(f, "needle:{letter}:{min_tokens}"),
            EventHandle::Detail { letter, min_tokens } => write!(f, "detail:{letter}:{min_tokens}"),
        }
    }
}

impl FromStr for EventHandle {
    type Err = ();

    /// Unknown handles are an error; callers usually treat them as background.
    fn from_str(s: &str) -> Result<Self, ()> {
        if s == "bg" || s.is_empty() {
            return Ok(EventHandle::Background);
        }
        let mut parts = s.split(':');
        let kind = parts.next().ok_or(())?;
        let mut letter_part = parts.next().ok_or(())?.chars();
        let letter = letter_part.next().ok_or(())?;
        if letter_part.next().is_some() || !letter.is_ascii_uppercase() {
            return Err(());
        }
        let min_tokens: u32 = parts.next().ok_or(())?.parse().map_err(|_| ())?;
        if parts.next().is_some() {
            return Err(());
        }
        match kind {
            "needle" => Ok(EventHandle::Needle { letter, min_tokens }),
            "detail" => Ok(EventHandle::Detail { letter, min_tokens }),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub id_prefix: String,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub n_options: usize,
    /// Fraction of samples carrying the needle interval as a label.
    pub labeled_fraction: f64,
    /// Fraction of samples whose needle letter is legible at coarse budget.
    pub coarse_legible_fraction: f64,
    /// Probability of a look-alike detail per grounding window.
    pub lookalike_prob: f64,
    pub coarse_frames: u32,
    pub windows: u32,
    pub coarse_tokens: u32,
    pub fine_tokens: u32,
    pub source: Source,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            seed: 0,
            id_prefix: "syn".into(),
            min_duration_s: 120.0,
            max_duration_s: 1200.0,
            n_options: 4,
            labeled_fraction: 0.5,
            coarse_legible_fraction: 0.0,
            lookalike_prob: 0.0,
            coarse_frames: 64,
            windows: 4,
            coarse_tokens: 16,
            fine_tokens: 64,
            source: Source::Synthetic,
        }
    }
}

fn letter(i: usize) -> char {
    char::from(b'A' + i as u8)
}

impl SyntheticConfig {
    pub fn generate(&self) -> Vec<Sample> {
        assert!((2..=OPTION_WORDS.len()).contains(&self.n_options), "2..=8 options supported");
        assert!(self.windows >= 1 && self.coarse_frames % self.windows == 0, "windows must tile the coarse view");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_samples).map(|i| self.one(i, &mut rng)).collect()
    }

    fn one(&self, index: usize, rng: &mut ChaCha8Rng) -> Sample {
        let duration = if self.max_duration_s > self.min_duration_s {
            rng.random_range(self.min_duration_s..self.max_duration_s)
        } else {
            self.min_duration_s
        };
        // round so the JSON form is short and exact
        let duration = (duration * 8.0).round() / 8.0;
        let frames = self.coarse_frames;
        let seg = |k: u32, frac: f64| duration * (f64::from(k) + frac) / f64::from(frames);
        let per_window = frames / self.windows;

        let answer = rng.random_range(0..self.n_options);
        let key = letter(answer);
        let needle_seg = rng.random_range(0..frames);
        let legible_coarse = rng.random_bool(self.coarse_legible_fraction.clamp(0.0, 1.0));
        let labeled = rng.random_bool(self.labeled_fraction.clamp(0.0, 1.0));
        let needle_min = if legible_coarse { self.coarse_tokens } else { self.fine_tokens };

        let mut events: Vec<(u32, EventHandle)> = vec![(
            needle_seg,
            EventHandle::Needle {
                letter: key,
                min_tokens: needle_min,
            },
        )];
        let wrong: Vec<char> = (0..self.n_options).filter(|&o| o != answer).map(letter).collect();
        for w in 0..self.windows {
            if !rng.random_bool(self.lookalike_prob.clamp(0.0, 1.0)) {
                continue;
            }
            let free: Vec<u32> = (w * per_window..(w + 1) * per_window).filter(|&k| k != needle_seg).collect();
            if let (Some(&k), Some(&l)) = (free.choose(rng), wrong.choose(rng)) {
                events.push((
                    k,
                    EventHandle::Detail {
                        letter: l,
                        min_tokens: self.fine_tokens,
                    },
                ));
            }
        }
        events.sort_by_key(|(k, _)| *k);

        let mut attachments = vec![FrameAttachment {
            t: 0.0,
            handle: EventHandle::Background.to_string(),
        }];
        for (k, handle) in &events {
            attachments.push(FrameAttachment {
                t: seg(*k, 0.2),
                handle: handle.to_string(),
            });
            attachments.push(FrameAttachment {
                t: seg(*k, 0.8),
                handle: EventHandle::Background.to_string(),
            });
        }

        let id = format!("{}-{}-{index}", self.id_prefix, self.seed);
        let video = VideoMeta::new(format!("{id}-video"), duration, format!("synthetic://{id}"))
            .and_then(|v| v.with_attachments(attachments))
            .expect("generated video is valid");
        let gt = labeled.then(|| Interval::new(seg(needle_seg, 0.2), seg(needle_seg, 0.8)).expect("ordered"));
        Sample {
            sample_id: id,
            video,
            question: "Which colour is written on the sign that appears briefly?".into(),
            options: OPTION_WORDS[..self.n_options].iter().map(|s| s.to_string()).collect(),
            answer_key: key.to_string(),
            gt_grounding: gt,
            source: self.source,
        }
    }
}
