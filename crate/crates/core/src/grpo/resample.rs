use super::Group;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abandoned {
    pub sample_id: String,
    pub attempts: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ResampleOutcome {
    /// Groups with positive reward variance, in input order.
    pub kept: Vec<Group>,
    pub abandoned: Vec<Abandoned>,
    /// Fresh group rollouts requested.
    pub resample_calls: usize,
}

/// Replaces zero-variance groups with fresh rollouts.
///
/// Each degenerate group gets up to `budget` calls to `resample(group,
/// attempt)`, which returns a new group for the same sample or an error
/// message. Groups still degenerate after the budget are abandoned and
/// logged, never raised.
pub fn dynamic_resample<F>(groups: Vec<Group>, budget: usize, mut resample: F) -> ResampleOutcome
where
    F: FnMut(&Group, usize) -> Result<Group, String>,
{
    let mut out = ResampleOutcome::default();
    for group in groups {
        if !group.is_degenerate() {
            out.kept.push(group);
            continue;
        }
        let mut current = group;
        let mut reason = "zero reward variance".to_string();
        let mut fixed = false;
        for attempt in 0..budget {
            out.resample_calls += 1;
            match resample(&current, attempt) {
                Ok(fresh) if !fresh.is_degenerate() => {
                    out.kept.push(fresh);
                    fixed = true;
                    break;
                }
                Ok(fresh) => current = fresh,
                Err(e) => reason = format!("resampling failed: {e}"),
            }
        }
        if !fixed {
            let rewards = current.rewards.first().copied().unwrap_or(f64::NAN);
            log::info!(
                "abandoning group {} after {budget} resample attempt(s): {reason} (reward {rewards})",
                current.sample_id
            );
            out.abandoned.push(Abandoned {
                sample_id: current.sample_id,
                attempts: budget,
                reason,
            });
        }
    }
    out
}
