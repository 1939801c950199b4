//! Multi-turn think-with-grounding rollouts for video question answering and
//! the group-relative reinforcement-learning calculus around them.
//!
//! A policy alternates reasoning with grounding actions that select a clip of
//! a coarse overview; the engine answers each grounding with a denser view of
//! that clip. Trajectories are scored with accuracy, format, grounding, and
//! self-confirmation rewards, standardized within groups, and optimized with
//! a clipped surrogate objective.
//!
//! The numeric core is generic over [`scalar::Scalar`] / [`scalar::Real`];
//! the aliases below fix the common instantiations.

pub mod data;
pub mod grpo;
pub mod harness;
pub mod policy;
pub mod prompt;
pub mod rewards;
pub mod rollout;
pub mod scalar;
pub mod tagfmt;
pub mod videorep;

/// Seconds-space interval in double precision.
pub type Interval = rewards::Interval<f64>;
pub type Interval32 = rewards::Interval<f32>;
/// Interval with exact rational endpoints.
pub type ExactInterval = rewards::Interval<num_rational::Rational64>;
pub type GroundingTerms = rewards::GroundingTerms<f64>;

pub use data::{Sample, Source};
pub use grpo::{GrpoConfig, Group};
pub use policy::{Policy, SamplingParams};
pub use rewards::{RewardBreakdown, RewardConfig};
pub use rollout::{run_trajectory, RolloutConfig, StopReason, Trajectory};
