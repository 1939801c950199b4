//! Finite-difference ascent on the clipped objective for the toy policy.

use super::{clipped_objective, kl_penalty_with, GrpoConfig, GrpoError, Group};
use crate::policy::{ToyAction, ToyConfig, ToyObservation, ToyPolicy, ToyPolicyParams};

/// One trajectory reduced to what the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBatchItem {
    pub steps: Vec<(ToyObservation, ToyAction)>,
    pub logp_old: f64,
    pub logp_ref: Option<f64>,
    pub advantage: f64,
}

/// Flattens groups with advantages into batch items.
pub fn toy_batch(policy: &ToyPolicy, groups: &[Group]) -> Result<Vec<ToyBatchItem>, GrpoError> {
    let mut items = Vec::new();
    for g in groups {
        let adv = g.advantages.as_ref().ok_or(GrpoError::Missing("advantages"))?;
        let old = g.logp_old.as_ref().ok_or(GrpoError::Missing("logp_old"))?;
        let n = g.trajectories.len();
        if adv.len() != n || old.len() != n || g.logp_ref.as_ref().is_some_and(|r| r.len() != n) {
            return Err(GrpoError::LengthMismatch(format!("group {}", g.sample_id)));
        }
        for (i, t) in g.trajectories.iter().enumerate() {
            let steps = policy
                .decode_trajectory(t)
                .map_err(|e| GrpoError::Config(format!("cannot score trajectory of {}: {e}", g.sample_id)))?;
            items.push(ToyBatchItem {
                steps,
                logp_old: old[i],
                logp_ref: g.logp_ref.as_ref().map(|r| r[i]),
                advantage: adv[i],
            });
        }
    }
    Ok(items)
}

fn trajectory_logp(config: &ToyConfig, params: &ToyPolicyParams, item: &ToyBatchItem) -> f64 {
    item.steps
        .iter()
        .map(|(obs, a)| params.log_prob(config, obs, *a).unwrap_or(f64::NEG_INFINITY))
        .sum()
}

/// Clipped objective minus the KL penalty, averaged over all items.
pub fn toy_objective(
    config: &ToyConfig,
    params: &ToyPolicyParams,
    batch: &[ToyBatchItem],
    grpo: &GrpoConfig,
) -> Result<f64, GrpoError> {
    let logp_new: Vec<f64> = batch.iter().map(|b| trajectory_logp(config, params, b)).collect();
    let logp_old: Vec<f64> = batch.iter().map(|b| b.logp_old).collect();
    let adv: Vec<f64> = batch.iter().map(|b| b.advantage).collect();
    let mut j = clipped_objective(&logp_new, &logp_old, &adv, grpo.clip_eps)?;
    if grpo.kl_beta > 0.0 {
        let logp_ref = batch
            .iter()
            .map(|b| b.logp_ref)
            .collect::<Option<Vec<f64>>>()
            .ok_or(GrpoError::Missing("logp_ref"))?;
        j -= kl_penalty_with(&logp_new, &logp_ref, grpo.kl_beta, grpo.kl_estimator)?;
    }
    Ok(j)
}

/// Central differences of [`toy_objective`] in every parameter.
pub fn finite_difference_gradient(
    config: &ToyConfig,
    params: &ToyPolicyParams,
    batch: &[ToyBatchItem],
    grpo: &GrpoConfig,
    fd_eps: f64,
) -> Result<Vec<f64>, GrpoError> {
    if !(fd_eps > 0.0) {
        return Err(GrpoError::Config("fd_eps must be > 0".into()));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.theta.len());
    for j in 0..params.theta.len() {
        let x = params.theta[j];
        probe.theta[j] = x + fd_eps;
        let up = toy_objective(config, &probe, batch, grpo)?;
        probe.theta[j] = x - fd_eps;
        let down = toy_objective(config, &probe, batch, grpo)?;
        probe.theta[j] = x;
        let g = (up - down) / (2.0 * fd_eps);
        if !g.is_finite() {
            return Err(GrpoError::NonFinite("gradient component"));
        }
        grad.push(g);
    }
    Ok(grad)
}

/// One ascent step of size `step_size` along the finite-difference gradient.
pub fn toy_policy_step(
    policy: &ToyPolicy,
    groups: &[Group],
    grpo: &GrpoConfig,
    step_size: f64,
    fd_eps: f64,
) -> Result<ToyPolicyParams, GrpoError> {
    toy_policy_step_clipped(policy, groups, grpo, step_size, fd_eps, f64::INFINITY)
}

/// As [`toy_policy_step`], with the gradient rescaled to Euclidean norm at
/// most `max_grad_norm` before the step.
pub fn toy_policy_step_clipped(
    policy: &ToyPolicy,
    groups: &[Group],
    grpo: &GrpoConfig,
    step_size: f64,
    fd_eps: f64,
    max_grad_norm: f64,
) -> Result<ToyPolicyParams, GrpoError> {
    grpo.validate()?;
    if !(max_grad_norm > 0.0) {
        return Err(GrpoError::Config("max_grad_norm must be > 0".into()));
    }
    let batch = toy_batch(policy, groups)?;
    if batch.is_empty() {
        return Ok(policy.params.clone());
    }
    let mut grad = finite_difference_gradient(&policy.config, &policy.params, &batch, grpo, fd_eps)?;
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_grad_norm {
        grad.iter_mut().for_each(|g| *g *= max_grad_norm / norm);
    }
    let mut next = policy.params.clone();
    for (t, g) in next.theta.iter_mut().zip(grad) {
        *t += step_size * g;
    }
    if next.theta.iter().any(|t| !t.is_finite()) {
        return Err(GrpoError::NonFinite("parameter"));
    }
    Ok(next)
}
