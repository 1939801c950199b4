//! Coarse and fine frame sampling plans, and the conversion from coarse
//! frame indices to clip boundaries in seconds.
//!
//! Frames sit at segment midpoints: a view of `F` frames over `[a, b]` uses
//! `a + (i + 0.5) * (b - a) / F`. A grounding `(s, e)` over a coarse view of
//! `F` frames covers the closed union of segments `s..=e`, i.e.
//! `[s * D / F, (e + 1) * D / F]`.
//!
//! No pixels are decoded here. A video may carry a sparse list of frame
//! attachments (opaque handles keyed by the time they start to apply); a
//! view resolves each sampled timestamp to the latest attachment at or
//! before it and forwards those handles to the policy.

use crate::scalar::{Real, Scalar};
use crate::tagfmt::GroundAction;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewError {
    #[error("frame count must be positive")]
    ZeroFrames,
    #[error("tokens per frame must be positive")]
    ZeroTokens,
    #[error("video duration must be positive and finite, got {0}")]
    BadDuration(f64),
    #[error("clip [{start}, {end}] is not inside [0, {duration}]")]
    BadClip { start: f64, end: f64, duration: f64 },
    #[error("grounding ({start}, {end}) is outside 0..{frames}")]
    BadGrounding { start: u32, end: u32, frames: u32 },
    #[error("attachment at {t}s lies outside [0, {duration}]")]
    BadAttachment { t: f64, duration: f64 },
    #[error("span of {span}s is too short for {frames} distinct frames")]
    Degenerate { span: f64, frames: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAttachment {
    pub t: f64,
    pub handle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration_s: f64,
    #[serde(rename = "uri", default)]
    pub source_uri: String,
    /// Sorted by `t`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<FrameAttachment>,
}

impl VideoMeta {
    pub fn new(
        video_id: impl Into<String>,
        duration_s: f64,
        source_uri: impl Into<String>,
    ) -> Result<Self, ViewError> {
        let video = Self {
            video_id: video_id.into(),
            duration_s,
            source_uri: source_uri.into(),
            frames: Vec::new(),
        };
        video.validate()?;
        Ok(video)
    }

    pub fn with_attachments(mut self, mut frames: Vec<FrameAttachment>) -> Result<Self, ViewError> {
        frames.sort_by(|a, b| a.t.total_cmp(&b.t));
        self.frames = frames;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ViewError> {
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(ViewError::BadDuration(self.duration_s));
        }
        for f in &self.frames {
            if !(0.0..=self.duration_s).contains(&f.t) {
                return Err(ViewError::BadAttachment {
                    t: f.t,
                    duration: self.duration_s,
                });
            }
        }
        if self.frames.windows(2).any(|w| w[0].t > w[1].t) {
            // keep the lookup below valid even for hand-built values
            return Err(ViewError::BadAttachment {
                t: f64::NAN,
                duration: self.duration_s,
            });
        }
        Ok(())
    }

    /// Handle in effect at time `t`, if any.
    pub fn handle_at(&self, t: f64) -> Option<&str> {
        let idx = self.frames.partition_point(|f| f.t <= t);
        idx.checked_sub(1).map(|i| self.frames[i].handle.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grain {
    Coarse,
    Fine,
}

/// A frame sampling plan over `[start_s, end_s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub grain: Grain,
    pub start_s: f64,
    pub end_s: f64,
    pub frame_count: u32,
    /// Upper bound on vision tokens per frame; the actual count is up to
    /// whoever tokenizes the frames.
    pub tokens_per_frame: u32,
    pub timestamps: Vec<f64>,
    /// Resolved attachment handle per timestamp; empty when the video has no
    /// attachments, otherwise `frames.len() == timestamps.len()`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<String>,
}

impl ViewSpec {
    pub fn span(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// A contiguous range of a video, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipSpec<'a> {
    pub start_s: f64,
    pub end_s: f64,
    pub parent: &'a VideoMeta,
}

impl<'a> ClipSpec<'a> {
    pub fn new(parent: &'a VideoMeta, start_s: f64, end_s: f64) -> Result<Self, ViewError> {
        if !(0.0 <= start_s && start_s < end_s && end_s <= parent.duration_s) {
            return Err(ViewError::BadClip {
                start: start_s,
                end: end_s,
                duration: parent.duration_s,
            });
        }
        Ok(Self {
            start_s,
            end_s,
            parent,
        })
    }

    pub fn whole(parent: &'a VideoMeta) -> Self {
        Self {
            start_s: 0.0,
            end_s: parent.duration_s,
            parent,
        }
    }
}

/// Midpoints of `n` equal segments of `[start, end]`.
pub fn midpoint_timestamps<T: Real>(start: T, end: T, n: u32) -> Vec<T> {
    let count = T::from(n).expect("u32 fits any float");
    let half = T::half();
    (0..n)
        .map(|i| {
            let i = T::from(i).expect("u32 fits any float");
            start + (i + half) * (end - start) / count
        })
        .collect()
}

/// Seconds at coarse-frame boundary `index` (0..=frames). The last boundary
/// is exactly `duration`.
pub fn frame_boundary<T: Scalar>(index: u32, frames: u32, duration: T) -> T {
    if index == frames {
        return duration;
    }
    duration * T::from_count(index.into()) / T::from_count(frames.into())
}

fn build_view(
    grain: Grain,
    video: &VideoMeta,
    start_s: f64,
    end_s: f64,
    frames: u32,
    tokens: u32,
) -> Result<ViewSpec, ViewError> {
    if frames == 0 {
        return Err(ViewError::ZeroFrames);
    }
    if tokens == 0 {
        return Err(ViewError::ZeroTokens);
    }
    let timestamps = midpoint_timestamps(start_s, end_s, frames);
    if timestamps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ViewError::Degenerate {
            span: end_s - start_s,
            frames,
        });
    }
    let handles = if video.frames.is_empty() {
        Vec::new()
    } else {
        timestamps
            .iter()
            .map(|&t| video.handle_at(t).unwrap_or_default().to_string())
            .collect()
    };
    Ok(ViewSpec {
        grain,
        start_s,
        end_s,
        frame_count: frames,
        tokens_per_frame: tokens,
        timestamps,
        frames: handles,
    })
}

/// Whole-video view with `frames` frames capped at `tokens` tokens each.
pub fn coarse_view(video: &VideoMeta, frames: u32, tokens: u32) -> Result<ViewSpec, ViewError> {
    video.validate()?;
    build_view(Grain::Coarse, video, 0.0, video.duration_s, frames, tokens)
}

/// Converts a coarse-index grounding into a clip in seconds.
pub fn ground_to_clip(
    video: &VideoMeta,
    ground: GroundAction,
    coarse_frames: u32,
) -> Result<ClipSpec<'_>, ViewError> {
    if !ground.is_valid_for(coarse_frames) {
        return Err(ViewError::BadGrounding {
            start: ground.start_frame,
            end: ground.end_frame,
            frames: coarse_frames,
        });
    }
    video.validate()?;
    let start = frame_boundary(ground.start_frame, coarse_frames, video.duration_s);
    let end = frame_boundary(ground.end_frame + 1, coarse_frames, video.duration_s);
    ClipSpec::new(video, start, end)
}

/// Clip view with `frames` frames capped at `tokens` tokens each.
pub fn fine_view(clip: &ClipSpec<'_>, frames: u32, tokens: u32) -> Result<ViewSpec, ViewError> {
    ClipSpec::new(clip.parent, clip.start_s, clip.end_s)?;
    build_view(Grain::Fine, clip.parent, clip.start_s, clip.end_s, frames, tokens)
}

/// Frame counts and per-frame token caps for both grains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    pub coarse_frames: u32,
    pub coarse_tokens: u32,
    pub fine_frames: u32,
    pub fine_tokens: u32,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self::low_resolution()
    }
}

impl ViewConfig {
    /// Training setting, also used for LR evaluation.
    pub fn low_resolution() -> Self {
        Self {
            coarse_frames: 64,
            coarse_tokens: 16,
            fine_frames: 16,
            fine_tokens: 64,
        }
    }

    /// High-resolution evaluation: same frame counts, larger token caps.
    pub fn high_resolution() -> Self {
        Self {
            coarse_tokens: 128,
            fine_tokens: 512,
            ..Self::low_resolution()
        }
    }

    pub fn validate(&self) -> Result<(), ViewError> {
        if self.coarse_frames == 0 || self.fine_frames == 0 {
            return Err(ViewError::ZeroFrames);
        }
        if self.coarse_tokens == 0 || self.fine_tokens == 0 {
            return Err(ViewError::ZeroTokens);
        }
        Ok(())
    }

    /// Whether the usual coarse/fine relation holds (more coarse frames,
    /// fewer coarse tokens). Not enforced.
    pub fn is_conventional(&self) -> bool {
        self.coarse_frames > self.fine_frames && self.coarse_tokens < self.fine_tokens
    }
}
