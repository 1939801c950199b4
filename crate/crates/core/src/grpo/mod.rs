//! Group-relative advantages, the clipped surrogate objective with a KL
//! penalty, dynamic resampling of uninformative groups, and a reference
//! optimizer for the toy policy.

mod optimizer;
mod resample;

pub use crate::policy::ToyPolicyParams;
pub use optimizer::{finite_difference_gradient, toy_batch, toy_objective, toy_policy_step, toy_policy_step_clipped, ToyBatchItem};
pub use resample::{dynamic_resample, Abandoned, ResampleOutcome};

use crate::rewards::RewardBreakdown;
use crate::rollout::Trajectory;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrpoError {
    #[error("group rewards have zero variance")]
    DegenerateGroup,
    #[error("a group needs at least 2 members, got {0}")]
    TooSmall(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("group is missing {0}")]
    Missing(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdKind {
    #[default]
    Population,
    /// Bessel-corrected.
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// `exp(ref - pol) - (ref - pol) - 1`.
    #[default]
    RatioMinusLogRatio,
    /// `(pol - ref)^2 / 2`.
    HalfSquaredLogRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub batch_size: usize,
    pub std_kind: StdKind,
    pub kl_estimator: KlEstimator,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.005,
            batch_size: 32,
            std_kind: StdKind::Population,
            kl_estimator: KlEstimator::RatioMinusLogRatio,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::Config(format!("group_size must be >= 2, got {}", self.group_size)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return Err(GrpoError::Config(format!("clip_eps must be > 0, got {}", self.clip_eps)));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(GrpoError::Config(format!("kl_beta must be >= 0, got {}", self.kl_beta)));
        }
        if self.batch_size == 0 {
            return Err(GrpoError::Config("batch_size must be > 0".into()));
        }
        Ok(())
    }
}

/// All rollouts for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub sample_id: String,
    pub trajectories: Vec<Trajectory>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantages: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_new: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_old: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
}

impl Group {
    pub fn new(sample_id: impl Into<String>, trajectories: Vec<Trajectory>, breakdowns: Vec<RewardBreakdown>) -> Self {
        let rewards = breakdowns.iter().map(|b| b.total).collect();
        let logp_old = trajectories.iter().map(|t| t.recorded_logprob()).collect();
        Self {
            sample_id: sample_id.into(),
            trajectories,
            breakdowns,
            rewards,
            advantages: None,
            logp_new: None,
            logp_old,
            logp_ref: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn is_degenerate(&self) -> bool {
        is_degenerate(&self.rewards)
    }

    pub fn compute_advantages(&mut self, std_kind: StdKind) -> Result<(), GrpoError> {
        self.advantages = Some(group_advantages_with(&self.rewards, std_kind)?);
        Ok(())
    }
}

/// No learning signal: every reward in the group is identical.
pub fn is_degenerate<T: Real>(rewards: &[T]) -> bool {
    rewards.windows(2).all(|w| w[0] == w[1])
}

/// `(R_i - mean) / std` with the population standard deviation.
pub fn group_advantages<T: Real>(rewards: &[T]) -> Result<Vec<T>, GrpoError> {
    group_advantages_with(rewards, StdKind::Population)
}

pub fn group_advantages_with<T: Real>(rewards: &[T], std_kind: StdKind) -> Result<Vec<T>, GrpoError> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::TooSmall(n));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite("reward"));
    }
    if is_degenerate(rewards) {
        return Err(GrpoError::DegenerateGroup);
    }
    // Offsetting by the minimum makes the result independent of any shift
    // that is exact in floating point.
    let base = rewards.iter().copied().fold(T::infinity(), T::min);
    let y: Vec<T> = rewards.iter().map(|&r| r - base).collect();
    let count = T::from_count(n as u64);
    let mut mean = y.iter().copied().fold(T::zero(), |a, b| a + b) / count;
    mean = mean + y.iter().map(|&v| v - mean).fold(T::zero(), |a, b| a + b) / count;
    let d: Vec<T> = y.iter().map(|&v| v - mean).collect();
    let ss = d.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b);
    let denom = match std_kind {
        StdKind::Population => count,
        StdKind::Sample => count - T::one(),
    };
    let std = (ss / denom).sqrt();
    if !(std > T::zero()) || !std.is_finite() {
        return Err(GrpoError::DegenerateGroup);
    }
    Ok(d.into_iter().map(|v| v / std).collect())
}

fn check_lengths(what: &str, a: usize, b: usize) -> Result<(), GrpoError> {
    if a != b {
        return Err(GrpoError::LengthMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Per-trajectory terms `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_terms<T: Real>(logp_new: &[T], logp_old: &[T], advantages: &[T], eps: T) -> Result<Vec<T>, GrpoError> {
    check_lengths("logp_new/logp_old", logp_new.len(), logp_old.len())?;
    check_lengths("logp_new/advantages", logp_new.len(), advantages.len())?;
    if !(eps > T::zero()) {
        return Err(GrpoError::Config("clip eps must be > 0".into()));
    }
    if logp_new.iter().chain(logp_old).any(|x| !x.is_finite()) {
        return Err(GrpoError::NonFinite("log-probability"));
    }
    if advantages.iter().any(|x| !x.is_finite()) {
        return Err(GrpoError::NonFinite("advantage"));
    }
    let (lo, hi) = (T::one() - eps, T::one() + eps);
    Ok(logp_new
        .iter()
        .zip(logp_old)
        .zip(advantages)
        .map(|((&new, &old), &a)| {
            let r = (new - old).exp();
            let clipped = r.max(lo).min(hi);
            (r * a).min(clipped * a)
        })
        .collect())
}

/// Mean of [`clipped_terms`].
pub fn clipped_objective<T: Real>(logp_new: &[T], logp_old: &[T], advantages: &[T], eps: T) -> Result<T, GrpoError> {
    let terms = clipped_terms(logp_new, logp_old, advantages, eps)?;
    if terms.is_empty() {
        return Err(GrpoError::TooSmall(0));
    }
    Ok(mean(&terms))
}

fn mean<T: Real>(xs: &[T]) -> T {
    xs.iter().copied().fold(T::zero(), |a, b| a + b) / T::from_count(xs.len() as u64)
}

/// `beta` times the mean per-trajectory KL estimate; subtract it from the
/// clipped objective.
pub fn kl_penalty<T: Real>(logp_policy: &[T], logp_ref: &[T], beta: T) -> Result<T, GrpoError> {
    kl_penalty_with(logp_policy, logp_ref, beta, KlEstimator::RatioMinusLogRatio)
}

pub fn kl_penalty_with<T: Real>(
    logp_policy: &[T],
    logp_ref: &[T],
    beta: T,
    estimator: KlEstimator,
) -> Result<T, GrpoError> {
    check_lengths("logp_policy/logp_ref", logp_policy.len(), logp_ref.len())?;
    if logp_policy.is_empty() {
        return Err(GrpoError::TooSmall(0));
    }
    if !(beta >= T::zero()) || !beta.is_finite() {
        return Err(GrpoError::Config("beta must be >= 0".into()));
    }
    if logp_policy.iter().chain(logp_ref).any(|x| !x.is_finite()) {
        return Err(GrpoError::NonFinite("log-probability"));
    }
    let terms: Vec<T> = logp_policy
        .iter()
        .zip(logp_ref)
        .map(|(&pol, &rf)| {
            let x = rf - pol;
            match estimator {
                // exp(x) - x - 1 without cancellation near 0
                KlEstimator::RatioMinusLogRatio => (x.exp_m1() - x).max(T::zero()),
                KlEstimator::HalfSquaredLogRatio => x * x / T::two(),
            }
        })
        .collect();
    Ok(beta * mean(&terms))
}
