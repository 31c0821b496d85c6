//! Reward mathematics: response parsing, answer-probability rewards, path
//! faithfulness step rewards, sigmoid shaping and hierarchical integration.

mod format;
mod hierarchy;
mod pfr;
mod shaping;

use serde::{Deserialize, Serialize};

pub use format::{answer_context, parse_format, reasoning_context, ParsedResponse};
pub use hierarchy::{additive_reward, group_success, hierarchical_reward, HierarchyInput, RewardCase};
pub use pfr::{
    answer_logprob, filtering_score, mask_prefix, pfr_final_reward, pfr_step_reward, pfr_trajectory, rlpr_reward,
    segment_steps, PfrTrace, StepScore, StepSegmentation,
};
pub use shaping::{shape_rewards, sigmoid, StepWeighting};

/// How the masked-prefix baseline conditions the gold suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Replace every prefix token with the mask token, preserving length.
    MaskTokens,
    /// Drop the prefix entirely; the baseline conditions on the question alone.
    DropPrefix,
    /// Diagnostic: the baseline is the prefix itself, so every gain is zero.
    Identity,
}

/// Scale of the values fed into shaping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScale {
    /// Summed log-probabilities and log-probability gains, as written.
    RawLogsum,
    /// Per-token values squashed into (0, 1): logistic of the mean gain for
    /// intermediate steps, geometric-mean probability for the final step.
    PerTokenSquashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PfrConfig {
    pub max_step_num: usize,
    pub mask_mode: MaskMode,
    pub reward_scale: RewardScale,
    pub c_penalty: f64,
    /// Outcome level at which a trajectory counts as a success for S_G.
    pub success_threshold: f64,
    pub warmup_steps: usize,
    pub weighting: StepWeighting,
}

impl Default for PfrConfig {
    fn default() -> Self {
        Self {
            max_step_num: 8,
            mask_mode: MaskMode::MaskTokens,
            reward_scale: RewardScale::PerTokenSquashed,
            c_penalty: 1.0,
            success_threshold: 0.99,
            warmup_steps: 20,
            weighting: StepWeighting::Sigmoid,
        }
    }
}

impl PfrConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_step_num < 1 {
            out.push("pfr.max_step_num: must be >= 1".to_string());
        }
        if !(self.success_threshold > 0.0 && self.success_threshold <= 1.0) {
            out.push("pfr.success_threshold: success threshold outside (0,1]".to_string());
        }
        if !self.c_penalty.is_finite() {
            out.push("pfr.c_penalty: must be finite".to_string());
        }
        out
    }
}

/// Everything that went into one trajectory's scalar reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub step_rewards: Vec<f64>,
    pub weights: Vec<f64>,
    /// 1-based gold suffix index chosen for each intermediate step.
    pub suffix_indices: Vec<usize>,
    pub pfr_weighted: Option<f64>,
    pub outcome: f64,
    pub case: RewardCase,
    pub reward: f64,
}

impl RewardBreakdown {
    pub fn simple(outcome: f64, case: RewardCase, reward: f64) -> Self {
        Self {
            step_rewards: Vec::new(),
            weights: Vec::new(),
            suffix_indices: Vec::new(),
            pfr_weighted: None,
            outcome,
            case,
            reward,
        }
    }
}
