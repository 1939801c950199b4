//! Greedy evaluation with sampled retries for trajectories that end
//! without an answer.

use super::{worker_pool, EngineConfig, HarnessError, TrajectoryRecord};
use crate::data::Sample;
use crate::policy::Policy;
use crate::rollout::{mix_seed, run_trajectory, StopReason};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedSample {
    pub sample_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitStats {
    pub samples: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_size: usize,
    pub evaluated: usize,
    pub failed: usize,
    pub correct: usize,
    /// Correct answers over the whole corpus; failed samples count as wrong.
    pub accuracy: f64,
    /// Keyed by source name.
    pub per_split: BTreeMap<String, SplitStats>,
    pub mean_groundings: f64,
    pub grounded_samples: usize,
    /// Turn count to number of trajectories.
    pub turn_histogram: BTreeMap<usize, usize>,
    pub stop_counts: BTreeMap<StopReason, usize>,
    pub total_retries: usize,
    pub retried_samples: usize,
}

impl EvalReport {
    /// Computes every field from the kept trajectories and failures.
    pub fn from_records(records: &[TrajectoryRecord], failures: &[FailedSample]) -> Self {
        let evaluated = records.len();
        let corpus_size = evaluated + failures.len();
        let mut per_split: BTreeMap<String, SplitStats> = BTreeMap::new();
        let mut turn_histogram = BTreeMap::new();
        let mut stop_counts = BTreeMap::new();
        let (mut correct, mut groundings, mut grounded, mut retries, mut retried) = (0, 0, 0, 0, 0);
        for r in records {
            let ok = r.is_correct();
            correct += usize::from(ok);
            let split = per_split.entry(r.source.as_str().to_string()).or_default();
            split.samples += 1;
            split.correct += usize::from(ok);
            let g = r.trajectory.grounding_count();
            groundings += g;
            grounded += usize::from(g > 0);
            *turn_histogram.entry(r.trajectory.turns.len()).or_insert(0) += 1;
            *stop_counts.entry(r.trajectory.stop).or_insert(0) += 1;
            retries += r.retry_count as usize;
            retried += usize::from(r.retry_count > 0);
        }
        for split in per_split.values_mut() {
            split.accuracy = split.correct as f64 / split.samples as f64;
        }
        Self {
            corpus_size,
            evaluated,
            failed: failures.len(),
            correct,
            accuracy: if corpus_size == 0 { 0.0 } else { correct as f64 / corpus_size as f64 },
            per_split,
            mean_groundings: if evaluated == 0 { 0.0 } else { groundings as f64 / evaluated as f64 },
            grounded_samples: grounded,
            turn_histogram,
            stop_counts,
            total_retries: retries,
            retried_samples: retried,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub records: Vec<TrajectoryRecord>,
    pub failures: Vec<FailedSample>,
}

/// One rollout per sample with `eval_sampling`; a trajectory without a
/// final answer is re-rolled whole with `sampling`, at most `eval_retries`
/// times, and the last attempt is kept.
pub fn run_eval(policy: &dyn Policy, samples: &[Sample], config: &EngineConfig) -> Result<EvalRun, HarnessError> {
    config.validate()?;
    if samples.is_empty() {
        return Err(HarnessError::Empty("evaluation corpus"));
    }
    let pool = worker_pool(config.workers)?;
    let rollout = config.rollout();
    let outcomes: Vec<Result<TrajectoryRecord, FailedSample>> = pool.install(|| {
        samples
            .par_iter()
            .enumerate()
            .map(|(i, sample)| {
                let base = mix_seed(config.seed, i as u64);
                let fail = |e: crate::rollout::RolloutError| FailedSample {
                    sample_id: sample.sample_id.clone(),
                    error: e.to_string(),
                };
                let mut seed = base;
                let mut traj = run_trajectory(policy, sample, &rollout, &config.eval_sampling, seed).map_err(fail)?;
                let mut retries = 0;
                while traj.stop != StopReason::Answered && retries < config.eval_retries {
                    retries += 1;
                    seed = mix_seed(base, u64::from(retries));
                    traj = run_trajectory(policy, sample, &rollout, &config.sampling, seed).map_err(fail)?;
                }
                Ok(TrajectoryRecord::new(sample, traj, None, seed, retries))
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => {
                log::warn!("evaluation of {} failed: {}", f.sample_id, f.error);
                failures.push(f);
            }
        }
    }
    Ok(EvalRun {
        report: EvalReport::from_records(&records, &failures),
        records,
        failures,
    })
}
