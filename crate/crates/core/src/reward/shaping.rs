use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};

/// Step weighting used when aggregating step rewards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepWeighting {
    /// `w_i = sigmoid(i)` with the raw 1-based step index.
    Sigmoid,
    /// `w_i = sigmoid(i / m)`, keeping weights distinct for long chains.
    SigmoidRescaled,
    /// Plain average (shaping ablated).
    Uniform,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted mean of `step_rewards`; returns the aggregate and the weights.
pub fn shape_rewards(step_rewards: &[f64], weighting: StepWeighting) -> Result<(f64, Vec<f64>)> {
    if step_rewards.is_empty() {
        return Err(P2sError::Input("at least one step reward is required".into()));
    }
    let m = step_rewards.len() as f64;
    let weights: Vec<f64> = (1..=step_rewards.len())
        .map(|i| match weighting {
            StepWeighting::Sigmoid => sigmoid(i as f64),
            StepWeighting::SigmoidRescaled => sigmoid(i as f64 / m),
            StepWeighting::Uniform => 1.0,
        })
        .collect();
    let num: f64 = weights.iter().zip(step_rewards).map(|(w, r)| w * r).sum();
    let den: f64 = weights.iter().sum();
    Ok((num / den, weights))
}
