//! Clipped group-relative surrogate with an exact KL penalty.

use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};
use crate::policy::{kl_divergence, NeuralPolicy, ParamSnapshot};
use crate::reward::RewardBreakdown;
use crate::vocab::Token;

/// One sampled response with the behaviour policy's per-token log-probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
    pub old_logprobs: Vec<f64>,
    pub advantage: f64,
}

/// G rollouts of one prompt with their rewards and group statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub task_id: usize,
    pub question: Vec<Token>,
    pub answer: Vec<Token>,
    pub trajectories: Vec<Trajectory>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub rewards: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub group_success: bool,
    /// Version of the snapshot the rollouts were sampled from.
    pub old_version: u64,
}

impl GroupBatch {
    pub fn advantages(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.advantage).collect()
    }

    pub fn has_signal(&self) -> bool {
        self.trajectories.iter().any(|t| t.advantage != 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    pub clip_epsilon: f64,
    pub kl_beta: f64,
}

/// Value of the surrogate for `batch` under `policy`, and its gradient.
///
/// Each token contributes `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`
/// minus `beta` times the exact KL from `policy` to `reference` at that
/// token's context; tokens are averaged within a trajectory, trajectories
/// within the group.
pub fn surrogate_objective(
    policy: &NeuralPolicy,
    old: &ParamSnapshot,
    reference: &ParamSnapshot,
    batch: &GroupBatch,
    config: SurrogateConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.old_version != old.version() {
        return Err(P2sError::Contract(format!(
            "batch sampled from snapshot {} but ratios requested against snapshot {}",
            batch.old_version,
            old.version()
        )));
    }
    if batch.trajectories.is_empty() {
        return Err(P2sError::Input("empty group".into()));
    }
    let ref_policy = policy.view(reference);
    let (lo, hi) = (1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
    let group_scale = 1.0 / batch.trajectories.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    let mut value = 0.0;
    for traj in &batch.trajectories {
        if traj.response.len() != traj.old_logprobs.len() {
            return Err(P2sError::Contract(format!(
                "trajectory has {} tokens but {} stored log-probabilities",
                traj.response.len(),
                traj.old_logprobs.len()
            )));
        }
        if traj.response.is_empty() {
            continue;
        }
        let scale = group_scale / traj.response.len() as f64;
        let a = traj.advantage;
        let mut ctx = traj.prompt.clone();
        for (tok, old_lp) in traj.response.iter().zip(&traj.old_logprobs) {
            let cache = policy.forward(&ctx);
            let lp = cache.logp[tok.index()];
            let rho = (lp - old_lp).exp();
            let clipped = rho.clamp(lo, hi);
            let surrogate = (rho * a).min(clipped * a);
            // the unclipped branch is active unless clipping strictly lowers the objective
            let active = rho * a <= clipped * a;
            let mut dlogits = vec![0.0; cache.logp.len()];
            if active && a != 0.0 {
                for (d, l) in dlogits.iter_mut().zip(&cache.logp) {
                    *d = -rho * a * l.exp();
                }
                dlogits[tok.index()] += rho * a;
            }
            let mut kl = 0.0;
            if config.kl_beta != 0.0 {
                let ref_logp = ref_policy.forward(&ctx).logp;
                kl = kl_divergence(&cache.logp, &ref_logp);
                for (v, d) in dlogits.iter_mut().enumerate() {
                    let p = cache.logp[v].exp();
                    *d -= config.kl_beta * p * (cache.logp[v] - ref_logp[v] - kl);
                }
            }
            value += scale * (surrogate - config.kl_beta * kl);
            policy.backprop(&cache, &dlogits, scale, &mut grad);
            ctx.push(*tok);
        }
    }
    Ok((value, grad))
}

/// Mean exact `KL(policy || reference)` over the given contexts.
pub fn kl_to_ref(policy: &NeuralPolicy, reference: &ParamSnapshot, contexts: &[Vec<Token>]) -> Result<f64> {
    if contexts.is_empty() {
        return Err(P2sError::Input("KL needs at least one context".into()));
    }
    let ref_policy = policy.view(reference);
    let total: f64 = contexts
        .iter()
        .map(|c| kl_divergence(&policy.forward(c).logp, &ref_policy.forward(c).logp))
        .sum();
    Ok(total / contexts.len() as f64)
}
