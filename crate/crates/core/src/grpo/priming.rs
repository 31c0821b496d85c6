//! Supervised priming on synthetic demonstrations.
//!
//! The demonstrations never show a reference answer. Free-running demos
//! write the response template with noisy arithmetic: each step is usually
//! off by a systematic slip, sometimes correct, otherwise random. Demos under
//! an answer hint draw a random hinted value and rationalise backwards from
//! it, so every step except the restated start value is consistent with the
//! hint rather than with the question. The answer either repeats the last
//! reasoning value or recomputes the last step from the one before it.
//!
//! Some free-running demos hide a leading part of the reasoning behind mask
//! tokens, so the policy also learns what it can and cannot predict without
//! seeing a prefix.
//!
//! The resulting policy has the layout down, rarely solves a problem when
//! sampling freely, and can reconstruct a chain when told the answer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};
use crate::goldcot::hint_context;
use crate::grpo::optim::{Optimizer, OptimizerKind};
use crate::policy::{NeuralPolicy, PolicyModel};
use crate::task::{Op, TaskInstance};
use crate::vocab::{Token, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrimingConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of demonstrations presented under an answer hint.
    pub hint_fraction: f64,
    /// Probability that a free-running step is computed correctly.
    pub step_correct: f64,
    /// Probability that a free-running step is off by `slip_offset`.
    pub step_slip: f64,
    pub slip_offset: u32,
    /// Probability that a hinted step is the backward-consistent value.
    pub hint_step_correct: f64,
    /// Probability that the answer repeats the last value rather than recomputing it.
    pub answer_copy: f64,
    /// Fraction of free-running demonstrations whose leading reasoning tokens
    /// are hidden behind mask tokens; the loss then covers only what follows.
    pub mask_fraction: f64,
}

impl Default for PrimingConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch: 16,
            learning_rate: 3e-3,
            seed: 7,
            hint_fraction: 0.5,
            step_correct: 0.25,
            step_slip: 0.45,
            slip_offset: 1,
            hint_step_correct: 0.85,
            answer_copy: 0.7,
            mask_fraction: 0.25,
        }
    }
}

impl PrimingConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.steps > 0 && self.batch == 0 {
            out.push("priming.batch: must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push("priming.learning_rate: must be positive".to_string());
        }
        for (name, p) in [
            ("hint_fraction", self.hint_fraction),
            ("step_correct", self.step_correct),
            ("step_slip", self.step_slip),
            ("hint_step_correct", self.hint_step_correct),
            ("answer_copy", self.answer_copy),
            ("mask_fraction", self.mask_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("priming.{name}: must lie in [0,1]"));
            }
        }
        if self.step_correct + self.step_slip > 1.0 {
            out.push("priming.step_slip: step_correct + step_slip must not exceed 1".to_string());
        }
        out
    }
}

/// Mean per-token negative log-likelihood over the last priming batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimingReport {
    pub final_loss: f64,
}

struct Demo<'a> {
    vocab: &'a Vocab,
    config: &'a PrimingConfig,
    modulus: u32,
}

impl Demo<'_> {
    fn tok(&self, v: u32) -> Result<Token> {
        self.vocab.token(&v.to_string())
    }

    fn noisy(&self, exact: u32, p_correct: f64, p_slip: f64, rng: &mut ChaCha8Rng) -> u32 {
        let u: f64 = rng.gen();
        if u < p_correct {
            exact
        } else if u < p_correct + p_slip {
            (exact + self.config.slip_offset) % self.modulus
        } else {
            rng.gen_range(0..self.modulus)
        }
    }

    /// Reasoning values `v_0..v_d` (with `v_0` the restated start) and the answer.
    fn values(&self, start: u32, program: &[(Op, u32)], hint: Option<u32>, rng: &mut ChaCha8Rng) -> Result<(Vec<u32>, u32)> {
        let c = self.config;
        let mut values = vec![start];
        for k in 0..program.len() {
            let (op, operand) = program[k];
            let v = match hint {
                None => self.noisy(op.apply(values[k], operand, self.modulus), c.step_correct, c.step_slip, rng),
                Some(h) if k + 1 == program.len() => h,
                Some(h) => {
                    let mut back = h;
                    for &(op, operand) in program[k + 1..].iter().rev() {
                        back = op.invert(back, operand, self.modulus).ok_or_else(|| {
                            P2sError::Config("hinted demonstrations need invertible operators".into())
                        })?;
                    }
                    self.noisy(back, c.hint_step_correct, 0.0, rng)
                }
            };
            values.push(v);
        }
        let last = *values.last().expect("values start with the restated value");
        let answer = match program.last() {
            Some(&(op, operand)) if !rng.gen_bool(c.answer_copy) => {
                op.apply(values[values.len() - 2], operand, self.modulus)
            }
            _ => last,
        };
        Ok((values, answer))
    }

    fn response(&self, values: &[u32], answer: u32) -> Result<Vec<Token>> {
        let s = self.vocab.specials();
        let mut out = vec![s.think_open];
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push(s.step_sep);
            }
            out.push(self.tok(*v)?);
        }
        out.extend([s.think_close, s.ans_open, self.tok(answer)?, s.ans_close, s.eos]);
        Ok(out)
    }
}

/// One demonstration for `task`: the context it is conditioned on and the response.
pub fn demonstration(
    vocab: &Vocab,
    task: &TaskInstance,
    hinted: bool,
    config: &PrimingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Token>, Vec<Token>)> {
    let demo = Demo { vocab, config, modulus: task.modulus };
    let (start, program) = task.program(vocab)?;
    if hinted {
        let h = rng.gen_range(0..task.modulus);
        let (values, answer) = demo.values(start, &program, Some(h), rng)?;
        Ok((hint_context(vocab, &task.question, &[demo.tok(h)?]), demo.response(&values, answer)?))
    } else {
        let (values, answer) = demo.values(start, &program, None, rng)?;
        Ok((task.question.clone(), demo.response(&values, answer)?))
    }
}

/// Fits `policy` to demonstrations drawn over the questions of `tasks`.
pub fn prime_format(policy: &mut NeuralPolicy, tasks: &[TaskInstance], config: &PrimingConfig) -> Result<PrimingReport> {
    if let Some(v) = config.violations().into_iter().next() {
        return Err(P2sError::Config(v));
    }
    if tasks.is_empty() {
        return Err(P2sError::Input("priming needs at least one task".into()));
    }
    let vocab = policy.vocab().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = Optimizer::new(OptimizerKind::Adam, policy.num_params());
    let mut final_loss = f64::NAN;
    for _ in 0..config.steps {
        let mut examples = Vec::with_capacity(config.batch);
        let mut count = 0usize;
        for _ in 0..config.batch {
            let task = &tasks[rng.gen_range(0..tasks.len())];
            let hinted = rng.gen_bool(config.hint_fraction);
            let (mut context, mut response) = demonstration(&vocab, task, hinted, config, &mut rng)?;
            if !hinted && rng.gen_bool(config.mask_fraction) {
                let reasoning = 2 * task.derivation.len() + 1;
                let hidden = rng.gen_range(1..reasoning);
                context.push(response[0]);
                context.extend(std::iter::repeat(vocab.specials().mask).take(hidden));
                response.drain(..1 + hidden);
            }
            count += response.len();
            examples.push((context, response));
        }
        let scale = 1.0 / count as f64;
        let mut grad = vec![0.0; policy.num_params()];
        let mut nll = 0.0;
        for (mut ctx, response) in examples {
            for tok in response {
                nll -= policy.accumulate_token_grad(&ctx, tok, scale, &mut grad);
                ctx.push(tok);
            }
        }
        final_loss = nll / count as f64;
        if !final_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(P2sError::Numerical("non-finite loss during priming".into()));
        }
        policy.update(|p| opt.ascend(p, &grad, config.learning_rate));
    }
    Ok(PrimingReport { final_loss })
}
