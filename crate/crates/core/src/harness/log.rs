//! JSON-lines trajectory logs: one [`TrajectoryRecord`] per line.

use super::HarnessError;
use crate::data::{Sample, Source};
use crate::prompt::TEMPLATE_VERSION;
use crate::rewards::RewardBreakdown;
use crate::rollout::Trajectory;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const LOG_SCHEMA: &str = "twg-trajectory/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub schema: String,
    pub template_version: String,
    pub source: Source,
    pub answer_key: String,
    /// Seed passed to the rollout that produced `trajectory`.
    pub seed: u64,
    /// Extra attempts made before this trajectory was kept.
    pub retry_count: u32,
    pub trajectory: Trajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown>,
}

impl TrajectoryRecord {
    pub fn new(sample: &Sample, trajectory: Trajectory, reward: Option<RewardBreakdown>, seed: u64, retry_count: u32) -> Self {
        Self {
            schema: LOG_SCHEMA.into(),
            template_version: TEMPLATE_VERSION.into(),
            source: sample.source,
            answer_key: sample.answer_key.clone(),
            seed,
            retry_count,
            trajectory,
            reward,
        }
    }

    pub fn sample_id(&self) -> &str {
        &self.trajectory.sample_id
    }

    pub fn is_correct(&self) -> bool {
        self.trajectory
            .final_answer
            .as_ref()
            .is_some_and(|a| a.matches_key(&self.answer_key))
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[TrajectoryRecord]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log; blank lines are skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrajectoryRecord>, HarnessError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| HarnessError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.schema != LOG_SCHEMA {
            return Err(HarnessError::Log {
                line: i + 1,
                message: format!("unsupported schema {:?}", record.schema),
            });
        }
        out.push(record);
    }
    Ok(out)
}
