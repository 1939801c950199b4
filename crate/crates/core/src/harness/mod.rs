//! Pipelines built on the engine: corpus rollouts, evaluation, toy training,
//! reward replay, and their logs.

mod config;
mod eval;
mod log;
mod replay;
mod train;

pub use config::{CurriculumConfig, EngineConfig, FilterConfig, TrainConfig};
pub use eval::{run_eval, EvalReport, EvalRun, FailedSample, SplitStats};
pub use log::{read_records, write_records, TrajectoryRecord, LOG_SCHEMA};
pub use replay::{replay_record, replay_rewards, FieldMismatch, LoggedJudge, ReplayReport};
pub use train::{emit_metrics, run_train_toy, write_metrics, MetricsRow, TrainOutcome, TrainStop};

use crate::data::{DataError, Sample};
use crate::grpo::{GrpoError, Group};
use crate::policy::{Policy, PolicyError, SamplingParams};
use crate::rewards::{total_reward, RewardConfig, RewardError};
use crate::rollout::{mix_seed, run_trajectory, RolloutConfig, RolloutError};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("record refers to unknown sample {0}")]
    UnknownSample(String),
    #[error("empty {0}")]
    Empty(&'static str),
}

impl HarnessError {
    /// A network-level policy failure that a fresh attempt may avoid.
    pub fn is_transient(&self) -> bool {
        match self {
            HarnessError::Rollout(e) => e.is_transient(),
            HarnessError::Reward(e) => e.is_transient(),
            HarnessError::Policy(e) => e.is_transient(),
            _ => false,
        }
    }
}

pub(crate) fn worker_pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Rolls out and scores `group_size` trajectories for one sample. Trajectory
/// `g` uses seed `mix_seed(seed, g)`.
pub fn rollout_group(
    policy: &dyn Policy,
    sample: &Sample,
    rollout: &RolloutConfig,
    sampling: &SamplingParams,
    rewards: &RewardConfig,
    group_size: usize,
    seed: u64,
) -> Result<Group, HarnessError> {
    let scored: Vec<_> = (0..group_size)
        .into_par_iter()
        .map(|g| -> Result<_, HarnessError> {
            let traj = run_trajectory(policy, sample, rollout, sampling, mix_seed(seed, g as u64))?;
            let breakdown = total_reward(&traj, sample, policy, rewards)?;
            Ok((traj, breakdown))
        })
        .collect::<Result<_, _>>()?;
    let (trajectories, breakdowns) = scored.into_iter().unzip();
    Ok(Group::new(&sample.sample_id, trajectories, breakdowns))
}

/// Groups of scored rollouts for every sample, as log records. Sample `i`
/// uses group seed `mix_seed(seed, i)`.
pub fn rollout_corpus(
    policy: &dyn Policy,
    samples: &[Sample],
    config: &EngineConfig,
) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    config.validate()?;
    let pool = worker_pool(config.workers)?;
    let rollout = config.rollout();
    let groups: Vec<(usize, Group)> = pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let seed = mix_seed(config.seed, i as u64);
                rollout_group(policy, s, &rollout, &config.sampling, &config.rewards, config.grpo.group_size, seed)
                    .map(|g| (i, g))
            })
            .collect::<Result<_, _>>()
    })?;
    let mut records = Vec::new();
    for (i, group) in groups {
        let sample = &samples[i];
        let group_seed = mix_seed(config.seed, i as u64);
        for (g, (traj, bd)) in group.trajectories.into_iter().zip(group.breakdowns).enumerate() {
            records.push(TrajectoryRecord::new(sample, traj, Some(bd), mix_seed(group_seed, g as u64), 0));
        }
    }
    Ok(records)
}
