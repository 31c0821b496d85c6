use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};
use crate::goldcot::{select_gold, synthesize_candidates_with, GoldCot, SelectOptions, Selection, SynthesisConfig};
use crate::grpo::advantage::{compute_advantages, mean_std};
use crate::grpo::optim::Optimizer;
use crate::grpo::surrogate::{kl_to_ref, surrogate_objective, GroupBatch, SurrogateConfig, Trajectory};
use crate::grpo::{Ablations, Mode, RefAnchor, TrainConfig};
use crate::policy::{sample, NeuralPolicy, ParamSnapshot, PolicyModel, SamplingParams};
use crate::reward::{
    additive_reward, group_success, hierarchical_reward, parse_format, pfr_final_reward, pfr_trajectory,
    HierarchyInput, ParsedResponse, PfrConfig, RewardBreakdown, RewardCase, StepWeighting,
};
use crate::task::{outcome_reward_exact, outcome_reward_f1, TaskInstance};

/// Everything that parameterises a training run besides the tasks and the policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSetup {
    pub train: TrainConfig,
    pub pfr: PfrConfig,
    pub synthesis: SynthesisConfig,
    pub mode: ModeField,
    pub ablations: Ablations,
}

/// [`Mode`] with a serde default, so a setup can omit it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeField(pub Mode);

impl Default for ModeField {
    fn default() -> Self {
        ModeField(Mode::P2s)
    }
}

impl TrainSetup {
    pub fn new(mode: Mode) -> Self {
        Self { mode: ModeField(mode), ..Default::default() }
    }

    pub fn mode(&self) -> Mode {
        self.mode.0
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = self.train.violations();
        out.extend(self.pfr.violations());
        out.extend(self.synthesis.violations());
        out
    }

    /// Reward configuration with the trainer's warmup length and ablations applied.
    fn effective_pfr(&self) -> PfrConfig {
        let mut pfr = self.pfr;
        pfr.warmup_steps = self.train.warmup_steps;
        if self.ablations.no_shaping {
            pfr.weighting = StepWeighting::Uniform;
        }
        pfr
    }
}

/// Number of trajectories that took each reward case in one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub format_penalty: usize,
    pub outcome: usize,
    pub warmup_zero: usize,
    pub no_gold_zero: usize,
    pub pfr: usize,
    pub additive: usize,
    pub rlpr: usize,
}

impl CaseCounts {
    fn add(&mut self, case: RewardCase) {
        let slot = match case {
            RewardCase::FormatPenalty => &mut self.format_penalty,
            RewardCase::Outcome => &mut self.outcome,
            RewardCase::WarmupZero => &mut self.warmup_zero,
            RewardCase::NoGoldZero => &mut self.no_gold_zero,
            RewardCase::Pfr => &mut self.pfr,
            RewardCase::Additive => &mut self.additive,
            RewardCase::Rlpr => &mut self.rlpr,
        };
        *slot += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_reward: f64,
    /// Mean outcome (unigram F1) over all trajectories.
    pub mean_outcome: f64,
    /// Fraction of trajectories whose answer matches exactly.
    pub success_rate: f64,
    /// Mean shaped PFR value over trajectories where it was computed.
    pub mean_pfr: Option<f64>,
    /// Fraction of groups whose reward spread exceeds the std floor.
    pub nonzero_adv_fraction: f64,
    pub format_rate: f64,
    pub mean_completion_len: f64,
    pub kl_to_ref: f64,
    pub sampling_passes: u64,
    pub scoring_passes: u64,
    pub gold_available: usize,
    pub cases: CaseCounts,
    pub learning_rate: f64,
    pub policy_version: u64,
}

/// The gold chain chosen for one problem in one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub step: usize,
    pub task_id: usize,
    pub k: usize,
    pub discarded: usize,
    pub selected: Option<usize>,
    pub reasoning: Option<String>,
    pub score: Option<f64>,
}

pub enum TrainEvent<'a> {
    Step(&'a StepMetrics),
    Gold(&'a GoldRecord),
    Group(&'a GroupBatch),
}

/// Held-out accuracy of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: usize,
    pub exact_match: f64,
    pub mean_f1: f64,
    pub format_rate: f64,
}

/// Decodes one response per task (greedy at temperature 0) and scores it.
pub fn evaluate(
    policy: &NeuralPolicy,
    tasks: &[TaskInstance],
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SamplingParams::new(temperature, max_len);
    let (mut exact, mut f1, mut fmt) = (0.0, 0.0, 0.0);
    for task in tasks {
        let s = sample(policy, &task.question, params, &mut rng)?;
        let parsed = parse_format(&s.tokens, policy.vocab());
        if parsed.format_ok {
            fmt += 1.0;
            exact += outcome_reward_exact(&parsed.answer, &task.answer);
            f1 += outcome_reward_f1(&parsed.answer, &task.answer);
        }
    }
    let n = tasks.len().max(1) as f64;
    Ok(EvalReport { tasks: tasks.len(), exact_match: exact / n, mean_f1: f1 / n, format_rate: fmt / n })
}

struct Rngs {
    prompts: ChaCha8Rng,
    rollouts: ChaCha8Rng,
    synthesis: ChaCha8Rng,
    selection: ChaCha8Rng,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(k);
            r
        };
        Self { prompts: stream(1), rollouts: stream(2), synthesis: stream(3), selection: stream(4) }
    }
}

/// The GRPO loop over a fixed task list.
pub struct Trainer {
    setup: TrainSetup,
    pfr: PfrConfig,
    policy: NeuralPolicy,
    tasks: Vec<TaskInstance>,
    optimizer: Optimizer,
    reference: ParamSnapshot,
    rngs: Rngs,
    step: usize,
}

impl Trainer {
    pub fn new(policy: NeuralPolicy, tasks: Vec<TaskInstance>, setup: TrainSetup) -> Result<Self> {
        if let Some(v) = setup.violations().into_iter().next() {
            return Err(P2sError::Config(v));
        }
        if tasks.is_empty() {
            return Err(P2sError::Input("training needs at least one task".into()));
        }
        for t in &tasks {
            policy.vocab().check(&t.question)?;
            policy.vocab().check(&t.answer)?;
        }
        Ok(Self {
            pfr: setup.effective_pfr(),
            optimizer: Optimizer::new(setup.train.optimizer, policy.num_params()),
            reference: policy.snapshot(),
            rngs: Rngs::new(setup.train.seed),
            setup,
            policy,
            tasks,
            step: 0,
        })
    }

    pub fn policy(&self) -> &NeuralPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> NeuralPolicy {
        self.policy
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn reference(&self) -> &ParamSnapshot {
        &self.reference
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.setup.train.steps
    }

    /// Runs every remaining step.
    pub fn run(&mut self, sink: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            self.step(sink)?;
        }
        Ok(())
    }

    /// One iteration: rollouts, rewards, advantages and one optimizer update.
    pub fn step(&mut self, sink: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>) -> Result<StepMetrics> {
        let cfg = self.setup.train;
        if self.step == cfg.warmup_steps && cfg.ref_anchor == RefAnchor::EndOfWarmup {
            self.reference = self.policy.snapshot();
        }
        let passes_before = self.policy.counter().snapshot();
        let old = self.policy.snapshot();

        let mut batches = Vec::with_capacity(cfg.batch_prompts);
        let mut cases = CaseCounts::default();
        let mut gold_available = 0;
        let mut pfr_values = Vec::new();
        for _ in 0..cfg.batch_prompts {
            let idx = self.rngs.prompts.gen_range(0..self.tasks.len());
            let task = self.tasks[idx].clone();
            let (batch, gold) = self.rollout_group(&task, &old)?;
            if let Some(record) = gold {
                if record.selected.is_some() {
                    gold_available += 1;
                }
                sink(TrainEvent::Gold(&record))?;
            }
            for b in &batch.breakdowns {
                cases.add(b.case);
                pfr_values.extend(b.pfr_weighted);
            }
            sink(TrainEvent::Group(&batch))?;
            batches.push(batch);
        }

        let lr = cfg.lr_schedule.rate(cfg.learning_rate, self.step, cfg.steps);
        let surrogate_cfg = SurrogateConfig { clip_epsilon: cfg.clip_epsilon, kl_beta: cfg.kl_beta };
        for _ in 0..cfg.inner_updates {
            let mut grad = vec![0.0; self.policy.num_params()];
            let scale = 1.0 / batches.len() as f64;
            for batch in &batches {
                let (value, g) = surrogate_objective(&self.policy, &old, &self.reference, batch, surrogate_cfg)?;
                if !value.is_finite() || g.iter().any(|x| !x.is_finite()) {
                    return Err(P2sError::Numerical(format!(
                        "non-finite surrogate at step {}; offending batch: {}",
                        self.step,
                        serde_json::to_string(batch)?
                    )));
                }
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += scale * b;
                }
            }
            let opt = &mut self.optimizer;
            self.policy.update(|p| opt.ascend(p, &grad, lr));
        }

        let metrics = self.metrics(&batches, cases, gold_available, &pfr_values, lr, passes_before)?;
        sink(TrainEvent::Step(&metrics))?;
        self.step += 1;
        Ok(metrics)
    }

    fn rollout_group(&mut self, task: &TaskInstance, old: &ParamSnapshot) -> Result<(GroupBatch, Option<GoldRecord>)> {
        let cfg = self.setup.train;
        let params = SamplingParams::new(cfg.temperature, cfg.max_len);
        let mut trajectories = Vec::with_capacity(cfg.group_size);
        let mut parsed = Vec::with_capacity(cfg.group_size);
        for _ in 0..cfg.group_size {
            let s = sample(&self.policy, &task.question, params, &mut self.rngs.rollouts)?;
            parsed.push(parse_format(&s.tokens, self.policy.vocab()));
            trajectories.push(Trajectory {
                prompt: task.question.clone(),
                response: s.tokens,
                old_logprobs: s.logprobs,
                advantage: 0.0,
            });
        }
        let outcomes: Vec<f64> = parsed
            .iter()
            .map(|p| if p.format_ok { outcome_reward_f1(&p.answer, &task.answer) } else { 0.0 })
            .collect();
        let (breakdowns, gold) = match self.setup.mode() {
            Mode::Grpo => (self.outcome_rewards(&parsed, &outcomes), None),
            Mode::Rlpr => (self.rlpr_rewards(task, &parsed, &outcomes)?, None),
            Mode::P2s => self.p2s_rewards(task, &parsed, &outcomes)?,
        };
        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.reward).collect();
        let advantages = compute_advantages(&rewards, cfg.std_estimator, cfg.std_floor);
        for (t, a) in trajectories.iter_mut().zip(&advantages) {
            t.advantage = *a;
        }
        let (mean, std) = mean_std(&rewards, cfg.std_estimator);
        let batch = GroupBatch {
            task_id: task.id,
            question: task.question.clone(),
            answer: task.answer.clone(),
            trajectories,
            breakdowns,
            rewards,
            mean,
            std,
            group_success: group_success(&outcomes, self.pfr.success_threshold),
            old_version: old.version(),
        };
        Ok((batch, gold))
    }

    fn outcome_rewards(&self, parsed: &[ParsedResponse], outcomes: &[f64]) -> Vec<RewardBreakdown> {
        parsed
            .iter()
            .zip(outcomes)
            .map(|(p, o)| {
                if p.format_ok {
                    RewardBreakdown::simple(*o, RewardCase::Outcome, *o)
                } else {
                    RewardBreakdown::simple(0.0, RewardCase::FormatPenalty, -self.pfr.c_penalty)
                }
            })
            .collect()
    }

    fn rlpr_rewards(
        &self,
        task: &TaskInstance,
        parsed: &[ParsedResponse],
        outcomes: &[f64],
    ) -> Result<Vec<RewardBreakdown>> {
        parsed
            .iter()
            .zip(outcomes)
            .map(|(p, o)| {
                if p.format_ok {
                    let r =
                        pfr_final_reward(&self.policy, &task.question, &p.reasoning, &task.answer, self.pfr.reward_scale)?;
                    Ok(RewardBreakdown::simple(*o, RewardCase::Rlpr, r))
                } else {
                    Ok(RewardBreakdown::simple(0.0, RewardCase::FormatPenalty, -self.pfr.c_penalty))
                }
            })
            .collect()
    }

    fn p2s_rewards(
        &mut self,
        task: &TaskInstance,
        parsed: &[ParsedResponse],
        outcomes: &[f64],
    ) -> Result<(Vec<RewardBreakdown>, Option<GoldRecord>)> {
        let ablations = self.setup.ablations;
        let sg = group_success(outcomes, self.pfr.success_threshold);
        let past_warmup = self.step >= self.pfr.warmup_steps;
        let any_valid = parsed.iter().any(|p| p.format_ok);
        // gold is only consulted by trajectories that can reach the PFR branch
        let needs_gold = past_warmup && any_valid && !ablations.no_pfr && (!sg || ablations.no_hierarchy);
        let (gold, record) = if needs_gold { self.synthesize_gold(task)? } else { (None, None) };
        let gold_available = gold.as_ref().is_some_and(|g| !g.is_empty());

        let mut out = Vec::with_capacity(parsed.len());
        for (p, o) in parsed.iter().zip(outcomes) {
            let mut input = HierarchyInput {
                format_ok: p.format_ok,
                outcome: *o,
                group_success: sg,
                pfr_weighted: None,
                gold_available,
                step: self.step,
            };
            let reaches_pfr = p.format_ok && past_warmup && gold_available && (!sg || ablations.no_hierarchy);
            let trace = match (&gold, reaches_pfr) {
                (Some(g), true) => {
                    Some(pfr_trajectory(&self.policy, &task.question, &p.reasoning, &task.answer, g, &self.pfr)?)
                }
                _ => None,
            };
            input.pfr_weighted = trace.as_ref().map(|t| t.weighted);
            let (reward, case) = if ablations.no_hierarchy {
                additive_reward(&input, &self.pfr)
            } else {
                hierarchical_reward(&input, &self.pfr)?
            };
            let mut b = RewardBreakdown::simple(*o, case, reward);
            if let Some(t) = trace {
                b.step_rewards = t.step_rewards;
                b.weights = t.weights;
                b.suffix_indices = t.suffix_indices;
                b.pfr_weighted = Some(t.weighted);
            }
            out.push(b);
        }
        Ok((out, record))
    }

    fn synthesize_gold(&mut self, task: &TaskInstance) -> Result<(Option<GoldCot>, Option<GoldRecord>)> {
        let synthesis = self.setup.synthesis;
        let candidates =
            synthesize_candidates_with(&self.policy, &task.question, &task.answer, &synthesis, &mut self.rngs.synthesis)?;
        let selection = if self.setup.ablations.no_gold_filter {
            Selection::Random(self.rngs.selection.next_u64())
        } else {
            Selection::BestScore
        };
        let options = SelectOptions {
            selection,
            strict: synthesis.strict,
            max_step_num: self.pfr.max_step_num,
            source_iteration: self.step,
        };
        let result = select_gold(&self.policy, &task.question, &task.answer, &candidates, options)?;
        let record = GoldRecord {
            step: self.step,
            task_id: task.id,
            k: candidates.len(),
            discarded: result.discarded(),
            selected: result.gold.as_ref().map(|g| g.candidate_index),
            reasoning: result.gold.as_ref().map(|g| self.policy.vocab().decode(&g.reasoning)),
            score: result.gold.as_ref().map(|g| g.score),
        };
        Ok((result.gold, Some(record)))
    }

    fn metrics(
        &self,
        batches: &[GroupBatch],
        cases: CaseCounts,
        gold_available: usize,
        pfr_values: &[f64],
        lr: f64,
        passes_before: crate::policy::PassCount,
    ) -> Result<StepMetrics> {
        let vocab = self.policy.vocab();
        let mut n = 0usize;
        let (mut reward, mut outcome, mut success, mut fmt, mut len) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut contexts = Vec::new();
        for b in batches {
            for (t, br) in b.trajectories.iter().zip(&b.breakdowns) {
                n += 1;
                reward += br.reward;
                outcome += br.outcome;
                len += t.response.len() as f64;
                let p = parse_format(&t.response, vocab);
                if p.format_ok {
                    fmt += 1.0;
                    success += outcome_reward_exact(&p.answer, &b.answer);
                }
                let mut ctx = t.prompt.clone();
                for tok in &t.response {
                    contexts.push(ctx.clone());
                    ctx.push(*tok);
                }
            }
        }
        let nf = n.max(1) as f64;
        let signal = batches.iter().filter(|b| b.std > self.setup.train.std_floor).count();
        let kl = if contexts.is_empty() { 0.0 } else { kl_to_ref(&self.policy, &self.reference, &contexts)? };
        let passes = self.policy.counter().snapshot().since(passes_before);
        Ok(StepMetrics {
            step: self.step,
            mean_reward: reward / nf,
            mean_outcome: outcome / nf,
            success_rate: success / nf,
            mean_pfr: (!pfr_values.is_empty()).then(|| pfr_values.iter().sum::<f64>() / pfr_values.len() as f64),
            nonzero_adv_fraction: signal as f64 / batches.len().max(1) as f64,
            format_rate: fmt / nf,
            mean_completion_len: len / nf,
            kl_to_ref: kl,
            sampling_passes: passes.sampling,
            scoring_passes: passes.scoring,
            gold_available,
            cases,
            learning_rate: lr,
            policy_version: self.policy.version(),
        })
    }
}

/// Trains `policy` on `tasks` and returns the final policy.
pub fn train(
    policy: NeuralPolicy,
    tasks: Vec<TaskInstance>,
    setup: TrainSetup,
    sink: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<NeuralPolicy> {
    let mut trainer = Trainer::new(policy, tasks, setup)?;
    trainer.run(sink)?;
    Ok(trainer.into_policy())
}

/// [`train`] with the reward source replaced by `mode`.
pub fn run_baseline(
    mode: Mode,
    policy: NeuralPolicy,
    tasks: Vec<TaskInstance>,
    mut setup: TrainSetup,
    sink: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<NeuralPolicy> {
    setup.mode = ModeField(mode);
    train(policy, tasks, setup, sink)
}
