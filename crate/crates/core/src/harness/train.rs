//! Closed-loop GRPO training of the toy policy on a sample corpus.

use super::{rollout_group, worker_pool, EngineConfig, HarnessError};
use crate::data::{CurriculumStage, CurriculumStream, Sample, Stage};
use crate::grpo::{dynamic_resample, toy_batch, toy_objective, toy_policy_step_clipped, Group};
use crate::policy::{Policy, ToyPolicy, ToyPolicyParams};
use crate::rollout::mix_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

/// One line of the training metrics table. Reward and behaviour columns
/// describe the groups as first rolled out, before any resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub stage: Stage,
    pub samples: usize,
    pub groups_kept: usize,
    pub groups_abandoned: usize,
    pub resample_calls: usize,
    pub mean_total: f64,
    pub mean_acc: f64,
    pub mean_format: f64,
    pub mean_iou: Option<f64>,
    pub mean_soft: Option<f64>,
    pub mean_hard: Option<f64>,
    pub mean_grounding: Option<f64>,
    pub mean_pseudo: Option<f64>,
    pub gated_fraction: f64,
    pub mean_turns: f64,
    pub grounded_fraction: f64,
    pub mean_groundings: f64,
    /// Objective at the pre-step parameters; empty when no group survived.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrainStop {
    Completed,
    /// Too many consecutive steps had no group with reward variance.
    Stalled { step: usize, consecutive: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ToyPolicyParams,
    pub metrics: Vec<MetricsRow>,
    pub stop: TrainStop,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn metrics_row(step: usize, stage: Stage, groups: &[Group]) -> MetricsRow {
    let bds = || groups.iter().flat_map(|g| g.breakdowns.iter());
    let trajs = || groups.iter().flat_map(|g| g.trajectories.iter());
    let n = trajs().count().max(1) as f64;
    MetricsRow {
        step,
        stage,
        samples: groups.len(),
        groups_kept: 0,
        groups_abandoned: 0,
        resample_calls: 0,
        mean_total: mean(bds().map(|b| b.total)).unwrap_or(0.0),
        mean_acc: mean(bds().map(|b| b.r_acc)).unwrap_or(0.0),
        mean_format: mean(bds().map(|b| b.r_format)).unwrap_or(0.0),
        mean_iou: mean(bds().filter_map(|b| b.iou)),
        mean_soft: mean(bds().filter_map(|b| b.r_soft)),
        mean_hard: mean(bds().filter_map(|b| b.r_hard)),
        mean_grounding: mean(bds().filter_map(|b| b.r_grounding)),
        mean_pseudo: mean(bds().filter_map(|b| b.r_pseudo)),
        gated_fraction: bds().filter(|b| b.gated).count() as f64 / n,
        mean_turns: trajs().map(|t| t.turns.len() as f64).sum::<f64>() / n,
        grounded_fraction: trajs().filter(|t| t.grounding_count() > 0).count() as f64 / n,
        mean_groundings: trajs().map(|t| t.grounding_count() as f64).sum::<f64>() / n,
        objective: None,
    }
}

/// Trains the toy policy for `config.train.steps` steps.
///
/// Each step draws one batch from the curriculum (the first stage for the
/// first `stage1_steps` steps unless skipped), rolls out a group per sample,
/// resamples zero-variance groups, scores the survivors under the starting
/// parameters for the KL reference, and takes one finite-difference ascent
/// step. Batch member `pos` at step `t` uses group seed
/// `mix_seed(mix_seed(seed, t), pos)`.
pub fn run_train_toy(
    samples: &[Sample],
    config: &EngineConfig,
    init: Option<ToyPolicyParams>,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let mut params = init.unwrap_or_else(|| ToyPolicyParams::zeros(&config.toy));
    let reference = ToyPolicy::new(config.toy, params.clone())?;
    let pool = worker_pool(config.workers)?;
    let rollout = config.rollout();
    let train = config.train;
    let batch_size = config.grpo.batch_size;
    let cur = &config.curriculum;
    let stage1_steps = if cur.skip_stage1 { 0 } else { cur.stage1_steps.min(train.steps) };

    let mut stage1 = if stage1_steps > 0 {
        Some(CurriculumStream::new(&cur.stage1(), samples, batch_size, mix_seed(config.seed, 1), cur.mix)?)
    } else {
        None
    };
    let mut stage2 = if train.steps > stage1_steps {
        Some(CurriculumStream::new(&CurriculumStage::stage2(), samples, batch_size, mix_seed(config.seed, 2), cur.mix)?)
    } else {
        None
    };

    let mut metrics = Vec::with_capacity(train.steps);
    let mut consecutive = 0;
    for step in 0..train.steps {
        let (stage, stream) = if step < stage1_steps {
            (Stage::Stage1, stage1.as_mut())
        } else {
            (Stage::Stage2, stage2.as_mut())
        };
        let batch = stream.and_then(Iterator::next).ok_or(HarnessError::Empty("curriculum"))?;
        let policy = ToyPolicy::new(config.toy, params.clone())?;
        let step_seed = mix_seed(config.seed, step as u64);
        let seeds: HashMap<String, (usize, u64)> = batch
            .members
            .iter()
            .enumerate()
            .map(|(pos, &i)| (samples[i].sample_id.clone(), (i, mix_seed(step_seed, pos as u64))))
            .collect();

        let group_at = |i: usize, seed: u64| {
            rollout_group(&policy, &samples[i], &rollout, &config.sampling, &config.rewards, config.grpo.group_size, seed)
        };
        let (initial, failed, outcome) = pool.install(|| -> Result<_, HarnessError> {
            let rolled = batch
                .members
                .par_iter()
                .map(|&i| {
                    let (_, seed) = seeds[&samples[i].sample_id];
                    let mut result = group_at(i, seed);
                    let mut attempt = 0;
                    while matches!(&result, Err(e) if e.is_transient()) && attempt < train.resample_budget {
                        result = group_at(i, mix_seed(seed, 1000 + attempt as u64));
                        attempt += 1;
                    }
                    match result {
                        Err(e) if e.is_transient() => {
                            log::info!("abandoning group {} after {attempt} resample attempt(s): {e}", samples[i].sample_id);
                            Ok(None)
                        }
                        other => other.map(Some),
                    }
                })
                .collect::<Result<Vec<_>, HarnessError>>()?;
            let failed = rolled.iter().filter(|g| g.is_none()).count();
            let groups: Vec<Group> = rolled.into_iter().flatten().collect();
            let outcome = dynamic_resample(groups.clone(), train.resample_budget, |g, attempt| {
                let (i, seed) = seeds[&g.sample_id];
                group_at(i, mix_seed(seed, 1000 + attempt as u64)).map_err(|e| e.to_string())
            });
            Ok((groups, failed, outcome))
        })?;

        let mut row = metrics_row(step, stage, &initial);
        row.groups_kept = outcome.kept.len();
        row.groups_abandoned = outcome.abandoned.len() + failed;
        row.resample_calls = outcome.resample_calls;

        if outcome.kept.is_empty() {
            consecutive += 1;
            log::warn!("step {step}: no group with reward variance ({consecutive} in a row)");
            metrics.push(row);
            if consecutive >= train.max_degenerate_batches {
                return Ok(TrainOutcome {
                    params,
                    metrics,
                    stop: TrainStop::Stalled { step, consecutive },
                });
            }
            continue;
        }
        consecutive = 0;

        let mut kept = outcome.kept;
        for g in &mut kept {
            let logp_ref = g
                .trajectories
                .iter()
                .map(|t| reference.score_trajectory(t))
                .collect::<Result<Vec<_>, _>>()?;
            g.logp_ref = Some(logp_ref);
            g.compute_advantages(config.grpo.std_kind)?;
        }
        let batch_items = toy_batch(&policy, &kept)?;
        row.objective = Some(toy_objective(&config.toy, &params, &batch_items, &config.grpo)?);
        params = toy_policy_step_clipped(&policy, &kept, &config.grpo, train.step_size, train.fd_eps, train.max_grad_norm)?;
        log::debug!("step {step}: mean reward {:.4}, theta {:?}", row.mean_total, params.theta);
        metrics.push(row);
    }
    Ok(TrainOutcome {
        params,
        metrics,
        stop: TrainStop::Completed,
    })
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the metrics table as CSV with a header row.
pub fn emit_metrics(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Empty("metrics"));
    }
    write_metrics(rows, std::fs::File::create(path)?)
}
