//! Trajectory rewards: accuracy, format, grounding (labeled data), and the
//! self-confirmed pseudo penalty (unlabeled data), combined under the
//! correctness gate.

mod interval;

pub use interval::{grounding_reward, temporal_iou, GroundingTerms, Interval, IntervalError};

use crate::data::Sample;
use crate::policy::{GenerationRequest, Message, Policy, PolicyError, SamplingParams};
use crate::prompt::{render_prompt, PromptKind};
use crate::rollout::Trajectory;
use crate::tagfmt::extract_answer;
use crate::videorep::{ground_to_clip, ViewSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ACCURACY_REWARD: f64 = 1.0;
pub const FORMAT_REWARD: f64 = 0.2;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("trajectory {trajectory} does not belong to sample {sample}")]
    Mismatch { trajectory: String, sample: String },
    #[error("invalid reward configuration: {0}")]
    Config(String),
    #[error("cannot map grounding to seconds: {0}")]
    Grounding(String),
}

impl RewardError {
    pub fn is_transient(&self) -> bool {
        matches!(self, RewardError::Policy(e) if e.is_transient())
    }
}

/// Penalty size and ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Penalty for a wrong self-confirmed answer.
    pub gamma: f64,
    /// Pay grounding-related terms only when the final answer is correct.
    pub gate_enabled: bool,
    pub use_soft: bool,
    pub use_hard: bool,
    pub use_pseudo: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            gate_enabled: true,
            use_soft: true,
            use_hard: true,
            use_pseudo: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(RewardError::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardCase {
    NoGrounding,
    Labeled,
    Unlabeled,
}

/// The self-confirmation exchange behind a pseudo reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfConfirm {
    pub raw: String,
    pub answer: Option<char>,
    pub correct: bool,
    /// No option letter could be read from `raw`.
    pub unparseable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub case: RewardCase,
    pub r_acc: f64,
    pub r_format: f64,
    /// IoU between the last grounding and the label, in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_soft: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_hard: Option<f64>,
    /// `r_soft + r_hard`; present on the labeled path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_grounding: Option<f64>,
    /// Present on the unlabeled path when the pseudo term is enabled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pseudo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_confirm: Option<SelfConfirm>,
    /// The gate removed a grounding-related term from `total`.
    pub gated: bool,
    pub total: f64,
}

impl RewardBreakdown {
    /// Checks the structural invariants of a breakdown.
    pub fn check(&self, gamma: f64) -> Result<(), String> {
        if self.r_acc != 0.0 && self.r_acc != ACCURACY_REWARD {
            return Err(format!("r_acc = {}", self.r_acc));
        }
        if self.r_format != 0.0 && self.r_format != FORMAT_REWARD {
            return Err(format!("r_format = {}", self.r_format));
        }
        if self.r_grounding.is_some() && self.r_pseudo.is_some() {
            return Err("both grounding and pseudo terms present".into());
        }
        if let Some(g) = self.r_grounding {
            let (s, h) = (self.r_soft.unwrap_or(0.0), self.r_hard.unwrap_or(0.0));
            if !(0.0..=1.5).contains(&g) || g != s + h || !(0.0..=1.0).contains(&s) || (h != 0.0 && h != 0.5) {
                return Err(format!("grounding {g} = {s} + {h}"));
            }
        }
        if let Some(p) = self.r_pseudo {
            if p != 0.0 && p != -gamma {
                return Err(format!("r_pseudo = {p}"));
            }
        }
        if self.r_acc == 0.0 && self.gated && self.total != self.r_format {
            return Err("gated total differs from the format reward".into());
        }
        Ok(())
    }
}

/// 1 when the trajectory ended with the keyed option, else 0.
pub fn accuracy_reward(trajectory: &Trajectory, answer_key: &str) -> f64 {
    match &trajectory.final_answer {
        Some(a) if a.matches_key(answer_key) => ACCURACY_REWARD,
        _ => 0.0,
    }
}

/// 0.2 when no turn is malformed, else 0.
pub fn format_reward(trajectory: &Trajectory) -> f64 {
    if trajectory.all_well_formed() {
        FORMAT_REWARD
    } else {
        0.0
    }
}

/// The label used for IoU. A zero-length label is widened to one coarse
/// segment centred on it, clamped to the video.
pub fn effective_label(sample: &Sample, coarse_frames: u32) -> Option<Interval<f64>> {
    let label = sample.gt_grounding?;
    if !label.is_degenerate() {
        return Some(label);
    }
    let d = sample.video.duration_s;
    let half = d / f64::from(coarse_frames.max(1)) / 2.0;
    Interval::new((label.start_s - half).max(0.0), (label.end_s + half).min(d)).ok()
}

/// Builds the self-confirmation request: the last fine view alone with the
/// self-confirm prompt, decoded greedily.
pub fn self_confirm_request(trajectory: &Trajectory, v_last: &ViewSpec) -> GenerationRequest {
    let prompt = trajectory.prompt.with_kind(PromptKind::SelfConfirm);
    GenerationRequest {
        video_uri: trajectory.video_uri.clone(),
        messages: vec![Message::user(prompt.clone(), render_prompt(&prompt), vec![v_last.clone()])],
        sampling: SamplingParams::greedy(),
        seed: 0,
    }
}

/// Asks the policy to answer from `v_last` alone. Returns `0` when its answer
/// matches the key and `-gamma` otherwise, including unparseable replies.
pub fn pseudo_reward(
    policy: &dyn Policy,
    trajectory: &Trajectory,
    v_last: &ViewSpec,
    answer_key: &str,
    gamma: f64,
) -> Result<(f64, SelfConfirm), RewardError> {
    let response = policy.generate(&self_confirm_request(trajectory, v_last))?;
    let parsed = extract_answer(&response.text);
    let correct = parsed.as_ref().is_some_and(|a| a.matches_key(answer_key));
    let record = SelfConfirm {
        answer: parsed.as_ref().and_then(|a| a.option),
        unparseable: parsed.as_ref().and_then(|a| a.option).is_none(),
        raw: response.text,
        correct,
    };
    Ok((if correct { 0.0 } else { -gamma }, record))
}

pub fn total_reward(
    trajectory: &Trajectory,
    sample: &Sample,
    policy: &dyn Policy,
    config: &RewardConfig,
) -> Result<RewardBreakdown, RewardError> {
    config.validate()?;
    if trajectory.sample_id != sample.sample_id {
        return Err(RewardError::Mismatch {
            trajectory: trajectory.sample_id.clone(),
            sample: sample.sample_id.clone(),
        });
    }
    let r_acc = accuracy_reward(trajectory, &sample.answer_key);
    let r_format = format_reward(trajectory);
    let mut out = RewardBreakdown {
        case: RewardCase::NoGrounding,
        r_acc,
        r_format,
        iou: None,
        r_soft: None,
        r_hard: None,
        r_grounding: None,
        r_pseudo: None,
        self_confirm: None,
        gated: false,
        total: r_acc + r_format,
    };
    let Some((g_last, v_last)) = trajectory.last_grounding() else {
        return Ok(out);
    };
    let pays = r_acc > 0.0 || !config.gate_enabled;
    let coarse_frames = trajectory.initial_view.frame_count;
    let term = if let Some(label) = effective_label(sample, coarse_frames) {
        out.case = RewardCase::Labeled;
        let clip = ground_to_clip(&sample.video, g_last, coarse_frames).map_err(|e| RewardError::Grounding(e.to_string()))?;
        let predicted = Interval::new(clip.start_s, clip.end_s).map_err(|e| RewardError::Grounding(e.to_string()))?;
        let terms = GroundingTerms::between(&predicted, &label);
        let soft = if config.use_soft { terms.soft } else { 0.0 };
        let hard = if config.use_hard { terms.hard } else { 0.0 };
        out.iou = Some(terms.soft);
        out.r_soft = Some(soft);
        out.r_hard = Some(hard);
        out.r_grounding = Some(soft + hard);
        soft + hard
    } else {
        out.case = RewardCase::Unlabeled;
        if !config.use_pseudo {
            return Ok(out);
        }
        let (p, record) = pseudo_reward(policy, trajectory, v_last, &sample.answer_key, config.gamma)?;
        out.r_pseudo = Some(p);
        out.self_confirm = Some(record);
        p
    };
    if pays {
        out.total += term;
    } else {
        out.gated = true;
    }
    Ok(out)
}
