//! Recomputes logged rewards offline. The self-confirmation reply stored
//! in each record stands in for the policy, so no model is needed.

use super::{HarnessError, TrajectoryRecord};
use crate::data::Sample;
use crate::policy::{approx_tokens, Capabilities, GenerationRequest, GenerationResponse, Policy, PolicyError, PolicyKind};
use crate::rewards::{total_reward, RewardBreakdown, RewardConfig};
use crate::rollout::Trajectory;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Answers self-confirmation requests with a logged reply and refuses
/// everything else.
#[derive(Debug, Clone, Default)]
pub struct LoggedJudge {
    pub reply: Option<String>,
}

impl LoggedJudge {
    pub fn for_record(record: &TrajectoryRecord) -> Self {
        Self {
            reply: record
                .reward
                .as_ref()
                .and_then(|r| r.self_confirm.as_ref())
                .map(|s| s.raw.clone()),
        }
    }
}

impl Policy for LoggedJudge {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Scripted
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, PolicyError> {
        if !request.is_self_confirm() {
            return Err(PolicyError::Unsupported("replay only answers self-confirmation requests"));
        }
        let text = self
            .reply
            .clone()
            .ok_or_else(|| PolicyError::InvalidRequest("no self-confirmation reply was logged".into()))?;
        Ok(GenerationResponse {
            token_count: approx_tokens(&text),
            text,
            total_logprob: None,
        })
    }

    fn score_trajectory(&self, _trajectory: &Trajectory) -> Result<f64, PolicyError> {
        Err(PolicyError::Unsupported("replay does not score trajectories"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMismatch {
    /// Position of the record in the log, from 0.
    pub record: usize,
    pub sample_id: String,
    pub field: String,
    /// JSON text of the logged value, `null` when absent.
    pub logged: String,
    pub replayed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub records: usize,
    pub matched: usize,
    /// Records without a logged reward.
    pub skipped: usize,
    pub mismatches: Vec<FieldMismatch>,
}

impl ReplayReport {
    pub fn all_matched(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Recomputes the reward breakdown of one record.
pub fn replay_record(
    record: &TrajectoryRecord,
    sample: &Sample,
    config: &RewardConfig,
) -> Result<RewardBreakdown, HarnessError> {
    let judge = LoggedJudge::for_record(record);
    Ok(total_reward(&record.trajectory, sample, &judge, config)?)
}

fn field_diffs(index: usize, id: &str, logged: &RewardBreakdown, replayed: &RewardBreakdown) -> Vec<FieldMismatch> {
    let to_map = |b: &RewardBreakdown| match serde_json::to_value(b).expect("breakdown serializes") {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("breakdown is a struct"),
    };
    let (a, b) = (to_map(logged), to_map(replayed));
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| FieldMismatch {
            record: index,
            sample_id: id.to_string(),
            field: k.clone(),
            logged: a.get(k).map_or("null".into(), |v| v.to_string()),
            replayed: b.get(k).map_or("null".into(), |v| v.to_string()),
        })
        .collect()
}

/// Replays every record that carries a reward and compares each breakdown
/// field for exact equality.
pub fn replay_rewards(
    records: &[TrajectoryRecord],
    samples: &[Sample],
    config: &RewardConfig,
) -> Result<ReplayReport, HarnessError> {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    let mut report = ReplayReport {
        records: records.len(),
        matched: 0,
        skipped: 0,
        mismatches: Vec::new(),
    };
    for (i, record) in records.iter().enumerate() {
        let Some(logged) = &record.reward else {
            report.skipped += 1;
            continue;
        };
        let sample = by_id
            .get(record.sample_id())
            .ok_or_else(|| HarnessError::UnknownSample(record.sample_id().to_string()))?;
        let replayed = replay_record(record, sample, config)?;
        if &replayed == logged {
            report.matched += 1;
        } else {
            report.mismatches.extend(field_diffs(i, record.sample_id(), logged, &replayed));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::SyntheticConfig;
    use crate::harness::{read_records, rollout_corpus, write_records, EngineConfig};
    use crate::policy::{ToyConfig, ToyPolicy};

    fn logged() -> (Vec<Sample>, Vec<TrajectoryRecord>, EngineConfig) {
        let samples = SyntheticConfig { n_samples: 10, labeled_fraction: 0.5, ..SyntheticConfig::default() }.generate();
        let cfg = EngineConfig::default();
        let policy = ToyPolicy::untrained(ToyConfig::default()).unwrap();
        let records = rollout_corpus(&policy, &samples, &cfg).unwrap();
        (samples, records, cfg)
    }

    #[test]
    fn persisted_rewards_replay_exactly() {
        let (samples, records, cfg) = logged();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        write_records(&path, &records).unwrap();
        let back = read_records(&path).unwrap();
        let report = replay_rewards(&back, &samples, &cfg.rewards).unwrap();
        assert!(report.all_matched(), "{:?}", report.mismatches);
        assert_eq!(report.matched, records.len());
        assert!(records.iter().any(|r| r.reward.as_ref().unwrap().self_confirm.is_some()));
    }

    #[test]
    fn tampered_fields_are_named() {
        let (samples, mut records, cfg) = logged();
        records[0].reward.as_mut().unwrap().total += 1.0;
        records[1].reward.as_mut().unwrap().r_format = 0.0;
        let report = replay_rewards(&records, &samples, &cfg.rewards).unwrap();
        assert_eq!(report.matched, records.len() - 2);
        let fields: Vec<_> = report.mismatches.iter().map(|m| (m.record, m.field.as_str())).collect();
        assert!(fields.contains(&(0, "total")));
        assert!(fields.contains(&(1, "r_format")));
    }

    #[test]
    fn unknown_samples_are_errors() {
        let (samples, records, cfg) = logged();
        assert!(matches!(
            replay_rewards(&records, &samples[1..], &cfg.rewards),
            Err(HarnessError::UnknownSample(_))
        ));
    }
}
