//! Group-relative policy optimisation: advantages, the clipped surrogate,
//! optimizers, template priming and the training loop.

mod advantage;
mod optim;
mod priming;
mod surrogate;
mod trainer;

use serde::{Deserialize, Serialize};

pub use advantage::{compute_advantages, mean_std, StdEstimator};
pub use optim::{LrSchedule, Optimizer, OptimizerKind};
pub use priming::{demonstration, prime_format, PrimingConfig, PrimingReport};
pub use surrogate::{kl_to_ref, surrogate_objective, GroupBatch, SurrogateConfig, Trajectory};
pub use trainer::{
    evaluate, run_baseline, train, CaseCounts, ModeField, EvalReport, GoldRecord, StepMetrics, TrainEvent, TrainSetup, Trainer,
};

/// Which reward drives the policy update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Format penalty, otherwise unigram-F1 outcome.
    Grpo,
    /// Format penalty, otherwise the reference-answer probability.
    Rlpr,
    /// Hierarchical outcome / path-faithfulness reward.
    P2s,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Grpo, Mode::Rlpr, Mode::P2s];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Grpo => "grpo",
            Mode::Rlpr => "rlpr",
            Mode::P2s => "p2s",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "grpo" => Ok(Mode::Grpo),
            "rlpr" => Ok(Mode::Rlpr),
            "p2s" => Ok(Mode::P2s),
            other => Err(format!("unknown mode {other:?} (expected grpo, rlpr or p2s)")),
        }
    }
}

/// Components switched off for ablation runs; all default to enabled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// Pick the gold chain uniformly among format-valid candidates.
    pub no_gold_filter: bool,
    /// Aggregate step rewards with uniform weights.
    pub no_shaping: bool,
    /// Add outcome and PFR instead of choosing hierarchically.
    pub no_hierarchy: bool,
    /// Failed groups get zero instead of PFR.
    pub no_pfr: bool,
}

impl Ablations {
    pub fn tags(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.no_gold_filter {
            out.push("gcf");
        }
        if self.no_shaping {
            out.push("rs");
        }
        if self.no_hierarchy {
            out.push("hri");
        }
        if self.no_pfr {
            out.push("pfr");
        }
        out
    }

    /// Switches off the component named by `tag` (`gcf`, `rs`, `hri` or `pfr`).
    pub fn disable(&mut self, tag: &str) -> std::result::Result<(), String> {
        match tag {
            "gcf" => self.no_gold_filter = true,
            "rs" => self.no_shaping = true,
            "hri" => self.no_hierarchy = true,
            "pfr" => self.no_pfr = true,
            other => return Err(format!("unknown ablation {other:?} (expected gcf, rs, hri or pfr)")),
        }
        Ok(())
    }
}

/// When the KL anchor is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefAnchor {
    /// The initial policy.
    Initial,
    /// The policy as it stands when warmup ends.
    EndOfWarmup,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub warmup_steps: usize,
    pub temperature: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub std_floor: f64,
    pub std_estimator: StdEstimator,
    /// Prompts per update.
    pub batch_prompts: usize,
    /// Token cap for sampled responses.
    pub max_len: usize,
    /// Surrogate updates per batch of rollouts.
    pub inner_updates: usize,
    pub lr_schedule: LrSchedule,
    pub ref_anchor: RefAnchor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_epsilon: 0.2,
            kl_beta: 0.0,
            learning_rate: 1e-3,
            steps: 500,
            warmup_steps: 20,
            temperature: 1.0,
            seed: 42,
            optimizer: OptimizerKind::Adam,
            std_floor: 1e-6,
            std_estimator: StdEstimator::Population,
            batch_prompts: 8,
            max_len: 24,
            inner_updates: 1,
            lr_schedule: LrSchedule::Constant,
            ref_anchor: RefAnchor::EndOfWarmup,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.group_size < 2 {
            out.push(format!("train.group_size: must be >= 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            out.push("train.clip_epsilon: clip epsilon outside (0,1)".to_string());
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            out.push("train.kl_beta: must be finite and >= 0".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push("train.learning_rate: must be positive".to_string());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            out.push("train.temperature: must be positive".to_string());
        }
        if !(self.std_floor > 0.0) {
            out.push("train.std_floor: must be positive".to_string());
        }
        if self.batch_prompts < 1 {
            out.push("train.batch_prompts: must be >= 1".to_string());
        }
        if self.max_len < 1 {
            out.push("train.max_len: must be >= 1".to_string());
        }
        if self.inner_updates < 1 {
            out.push("train.inner_updates: must be >= 1".to_string());
        }
        out
    }
}
