//! Answer-conditioned synthesis and selection of reference reasoning chains.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};
use crate::policy::{logprob_batch, sample, PolicyModel, SamplingParams};
use crate::reward::{answer_context, parse_format, segment_steps, ParsedResponse, StepSegmentation};
use crate::vocab::{Token, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub k: usize,
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Also require the candidate's own answer to equal the reference.
    pub strict: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { k: 4, temperature: 1.0, max_len: 32, seed: 42, strict: false }
    }
}

impl SynthesisConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.k < 1 {
            out.push("synthesis.k: must be >= 1".to_string());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            out.push("synthesis.temperature: must be finite and >= 0".to_string());
        }
        if self.max_len < 1 {
            out.push("synthesis.max_len: must be >= 1".to_string());
        }
        out
    }
}

/// One sampled candidate and its parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<Token>,
    pub parsed: ParsedResponse,
}

/// The selected reference chain for one problem in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldCot {
    pub reasoning: Vec<Token>,
    /// The candidate's own answer, which need not match the reference.
    pub answer: Vec<Token>,
    pub score: f64,
    /// Gold step spans; empty when the chain itself is empty.
    pub segmentation: StepSegmentation,
    pub source_iteration: usize,
    pub candidate_index: usize,
}

impl GoldCot {
    pub fn new(
        parsed: ParsedResponse,
        score: f64,
        source_iteration: usize,
        candidate_index: usize,
        max_step_num: usize,
    ) -> Result<Self> {
        if !parsed.format_ok {
            return Err(P2sError::Contract("gold-CoT must be format-valid".into()));
        }
        let segmentation = if parsed.reasoning.is_empty() {
            StepSegmentation { spans: Vec::new(), max_step_num }
        } else {
            segment_steps(&parsed.reasoning, max_step_num)?
        };
        Ok(Self {
            reasoning: parsed.reasoning,
            answer: parsed.answer,
            score,
            segmentation,
            source_iteration,
            candidate_index,
        })
    }

    /// A gold chain with no reasoning carries no step suffixes to score.
    pub fn is_empty(&self) -> bool {
        self.reasoning.is_empty()
    }
}

/// `<hint> y* q`: the answer-conditioned prompt used for synthesis. The hint
/// is placed ahead of the question so that the question keeps its usual
/// position relative to the reasoning that follows it.
pub fn hint_context(vocab: &Vocab, question: &[Token], y_star: &[Token]) -> Vec<Token> {
    let s = vocab.specials();
    let mut ctx = Vec::with_capacity(question.len() + y_star.len() + 1);
    ctx.push(s.hint);
    ctx.extend_from_slice(y_star);
    ctx.extend_from_slice(question);
    ctx
}

/// Draws exactly `config.k` responses from the hint context using `rng`.
pub fn synthesize_candidates_with<P: PolicyModel + ?Sized>(
    policy: &P,
    question: &[Token],
    y_star: &[Token],
    config: &SynthesisConfig,
    rng: &mut dyn RngCore,
) -> Result<Vec<Candidate>> {
    if let Some(v) = config.violations().into_iter().next() {
        return Err(P2sError::Config(v));
    }
    let ctx = hint_context(policy.vocab(), question, y_star);
    let params = SamplingParams::new(config.temperature, config.max_len);
    (0..config.k)
        .map(|_| {
            let s = sample(policy, &ctx, params, rng)?;
            let parsed = parse_format(&s.tokens, policy.vocab());
            Ok(Candidate { tokens: s.tokens, parsed })
        })
        .collect()
}

/// [`synthesize_candidates_with`] seeded from `config.seed`.
pub fn synthesize_candidates<P: PolicyModel + ?Sized>(
    policy: &P,
    question: &[Token],
    y_star: &[Token],
    config: &SynthesisConfig,
) -> Result<Vec<Candidate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    synthesize_candidates_with(policy, question, y_star, config, &mut rng)
}

/// How a gold chain is picked among the eligible candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Highest filtering score, lowest index on ties.
    BestScore,
    /// Uniform choice among eligible candidates, keyed by this seed.
    Random(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectOptions {
    pub selection: Selection,
    pub strict: bool,
    pub max_step_num: usize,
    pub source_iteration: usize,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self { selection: Selection::BestScore, strict: false, max_step_num: 8, source_iteration: 0 }
    }
}

/// Outcome of selection, with per-candidate scores for logging.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldSelection {
    pub gold: Option<GoldCot>,
    /// Filtering score of each candidate, `None` where it was discarded.
    pub scores: Vec<Option<f64>>,
}

impl GoldSelection {
    pub fn discarded(&self) -> usize {
        self.scores.iter().filter(|s| s.is_none()).count()
    }
}

/// Discards format-invalid candidates (and, when strict, wrong answers), scores
/// the rest with the filtering score in one batched pass and picks the gold chain.
pub fn select_gold<P: PolicyModel + ?Sized>(
    policy: &P,
    question: &[Token],
    y_star: &[Token],
    candidates: &[Candidate],
    options: SelectOptions,
) -> Result<GoldSelection> {
    let eligible: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.parsed.format_ok && (!options.strict || c.parsed.answer == y_star))
        .map(|(i, _)| i)
        .collect();
    let mut scores = vec![None; candidates.len()];
    if eligible.is_empty() {
        return Ok(GoldSelection { gold: None, scores });
    }
    let vocab = policy.vocab();
    let contexts: Vec<Vec<Token>> = eligible
        .iter()
        .map(|&i| answer_context(vocab, question, &candidates[i].parsed.reasoning))
        .collect();
    let refs: Vec<&[Token]> = contexts.iter().map(Vec::as_slice).collect();
    let values = logprob_batch(policy, y_star, &refs)?;
    for (&i, v) in eligible.iter().zip(&values) {
        scores[i] = Some(*v);
    }
    let pick = match options.selection {
        Selection::BestScore => {
            let mut best = 0;
            for j in 1..eligible.len() {
                if values[j] > values[best] {
                    best = j;
                }
            }
            best
        }
        Selection::Random(seed) => ChaCha8Rng::seed_from_u64(seed).gen_range(0..eligible.len()),
    };
    let idx = eligible[pick];
    let gold = GoldCot::new(
        candidates[idx].parsed.clone(),
        values[pick],
        options.source_iteration,
        idx,
        options.max_step_num,
    )?;
    Ok(GoldSelection { gold: Some(gold), scores })
}
