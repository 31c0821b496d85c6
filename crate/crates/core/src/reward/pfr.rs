//! Answer-probability rewards and path faithfulness step rewards.

use std::ops::Range;

use crate::error::{P2sError, Result};
use crate::goldcot::GoldCot;
use crate::policy::{logprob, logprob_batch, PolicyModel};
use crate::reward::format::{answer_context, reasoning_context};
use crate::reward::shaping::{shape_rewards, sigmoid};
use crate::reward::{MaskMode, PfrConfig, RewardScale};
use crate::vocab::Token;

/// Contiguous, balanced partition of a reasoning chain into steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSegmentation {
    pub spans: Vec<Range<usize>>,
    pub max_step_num: usize,
}

impl StepSegmentation {
    pub fn m(&self) -> usize {
        self.spans.len()
    }

    /// Token count of the first `i` steps.
    pub fn prefix_len(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.spans[i - 1].end
        }
    }
}

/// Splits `z` into `min(max_step_num, |z|)` spans whose sizes differ by at
/// most one, longer spans first.
pub fn segment_steps(z: &[Token], max_step_num: usize) -> Result<StepSegmentation> {
    if z.is_empty() {
        return Err(P2sError::Input("cannot segment an empty reasoning chain".into()));
    }
    if max_step_num == 0 {
        return Err(P2sError::Config("max_step_num must be >= 1".into()));
    }
    let m = max_step_num.min(z.len());
    let (base, extra) = (z.len() / m, z.len() % m);
    let mut spans = Vec::with_capacity(m);
    let mut start = 0;
    for i in 0..m {
        let len = base + usize::from(i < extra);
        spans.push(start..start + len);
        start += len;
    }
    Ok(StepSegmentation { spans, max_step_num })
}

/// `log pi(y* | q, z)` summed over the answer tokens.
pub fn answer_logprob<P: PolicyModel + ?Sized>(
    policy: &P,
    question: &[Token],
    reasoning: &[Token],
    y_star: &[Token],
) -> Result<f64> {
    if y_star.is_empty() {
        return Err(P2sError::Input("reference answer must be nonempty".into()));
    }
    let ctx = answer_context(policy.vocab(), question, reasoning);
    logprob(policy, y_star, &ctx)
}

/// Reference-probability reward of a generated reasoning chain.
pub fn rlpr_reward<P: PolicyModel + ?Sized>(policy: &P, q: &[Token], z: &[Token], y_star: &[Token]) -> Result<f64> {
    answer_logprob(policy, q, z, y_star)
}

/// Quality score of a candidate reasoning chain during gold-CoT selection.
pub fn filtering_score<P: PolicyModel + ?Sized>(policy: &P, q: &[Token], z: &[Token], y_star: &[Token]) -> Result<f64> {
    answer_logprob(policy, q, z, y_star)
}

pub fn mask_prefix(prefix: &[Token], mode: MaskMode, mask: Token) -> Vec<Token> {
    match mode {
        MaskMode::MaskTokens => vec![mask; prefix.len()],
        MaskMode::DropPrefix => Vec::new(),
        MaskMode::Identity => prefix.to_vec(),
    }
}

/// Best suffix gain for one reasoning prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScore {
    /// Mode-dependent step reward.
    pub value: f64,
    /// Raw log-probability gain of the selected suffix.
    pub raw_gain: f64,
    /// 1-based gold step at which the selected suffix starts.
    pub suffix_index: usize,
}

/// Maximum over gold step boundaries `t` of
/// `log pi(s_t | q, p) - log pi(s_t | q, mask(p))`, where `s_t` is the gold
/// reasoning from step `t` on. Each suffix costs one batched scoring pass.
pub fn pfr_step_reward<P: PolicyModel + ?Sized>(
    policy: &P,
    question: &[Token],
    prefix: &[Token],
    gold: &GoldCot,
    config: &PfrConfig,
) -> Result<StepScore> {
    if gold.reasoning.is_empty() {
        return Err(P2sError::Domain("gold-CoT has no reasoning steps".into()));
    }
    if prefix.is_empty() {
        return Err(P2sError::Input("prefix must be nonempty".into()));
    }
    let vocab = policy.vocab();
    let with_prefix = reasoning_context(vocab, question, prefix);
    let masked = reasoning_context(vocab, question, &mask_prefix(prefix, config.mask_mode, vocab.specials().mask));
    let mut best: Option<StepScore> = None;
    for (t, span) in gold.segmentation.spans.iter().enumerate() {
        let suffix = &gold.reasoning[span.start..];
        let scores = logprob_batch(policy, suffix, &[&with_prefix, &masked])?;
        let gain = scores[0] - scores[1];
        let gain = if gain.is_nan() { f64::NEG_INFINITY } else { gain };
        let value = match config.reward_scale {
            RewardScale::RawLogsum => gain,
            RewardScale::PerTokenSquashed => sigmoid(gain / suffix.len() as f64),
        };
        if best.map_or(true, |b| value > b.value) {
            best = Some(StepScore { value, raw_gain: gain, suffix_index: t + 1 });
        }
    }
    Ok(best.expect("segmentation of a nonempty chain has at least one step"))
}

/// Final-step reward: the answer log-probability, or its per-token geometric mean.
pub fn pfr_final_reward<P: PolicyModel + ?Sized>(
    policy: &P,
    question: &[Token],
    reasoning: &[Token],
    y_star: &[Token],
    scale: RewardScale,
) -> Result<f64> {
    let lp = answer_logprob(policy, question, reasoning, y_star)?;
    Ok(match scale {
        RewardScale::RawLogsum => lp,
        RewardScale::PerTokenSquashed => (lp / y_star.len() as f64).exp(),
    })
}

/// Step rewards, weights and aggregate for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PfrTrace {
    pub step_rewards: Vec<f64>,
    pub suffix_indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub weighted: f64,
}

/// Scores every step of `reasoning` against `gold` and aggregates them.
/// Intermediate steps use the suffix gain; the last step uses the final
/// answer reward. An empty chain has a single (final) step.
pub fn pfr_trajectory<P: PolicyModel + ?Sized>(
    policy: &P,
    question: &[Token],
    reasoning: &[Token],
    y_star: &[Token],
    gold: &GoldCot,
    config: &PfrConfig,
) -> Result<PfrTrace> {
    let mut step_rewards = Vec::new();
    let mut suffix_indices = Vec::new();
    if !reasoning.is_empty() {
        let seg = segment_steps(reasoning, config.max_step_num)?;
        for i in 1..seg.m() {
            let score = pfr_step_reward(policy, question, &reasoning[..seg.prefix_len(i)], gold, config)?;
            step_rewards.push(score.value);
            suffix_indices.push(score.suffix_index);
        }
    }
    step_rewards.push(pfr_final_reward(policy, question, reasoning, y_star, config.reward_scale)?);
    let (weighted, weights) = shape_rewards(&step_rewards, config.weighting)?;
    Ok(PfrTrace { step_rewards, suffix_indices, weights, weighted })
}
