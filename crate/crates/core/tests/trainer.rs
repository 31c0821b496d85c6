use p2s_core::grpo::{prime_format, Mode, PrimingConfig, StepMetrics, TrainEvent, TrainSetup, Trainer};
use p2s_core::policy::{NeuralConfig, NeuralPolicy};
use p2s_core::task::{generate_split, TaskGenConfig, TaskSplit};

fn small() -> (NeuralPolicy, TaskSplit) {
    let tcfg = TaskGenConfig { difficulty: (2, 2), count: 12, ..TaskGenConfig::default() };
    let split = generate_split(&tcfg, 4).unwrap();
    let cfg = NeuralConfig { embed_dim: 8, window: 12, hidden: 16, init_scale: 0.1, seed: 3 };
    let mut policy = NeuralPolicy::new(tcfg.vocab().unwrap(), cfg).unwrap();
    prime_format(&mut policy, &split.train, &PrimingConfig { steps: 150, ..PrimingConfig::default() }).unwrap();
    (policy, split)
}

fn setup(mode: Mode, steps: usize, warmup: usize) -> TrainSetup {
    let mut s = TrainSetup::new(mode);
    s.train.steps = steps;
    s.train.warmup_steps = warmup;
    s.train.batch_prompts = 2;
    s.synthesis.max_len = 20;
    s
}

fn run(policy: &NeuralPolicy, split: &TaskSplit, s: TrainSetup) -> (Vec<StepMetrics>, Vec<f64>) {
    let mut metrics = Vec::new();
    let mut t = Trainer::new(policy.fork(), split.train.clone(), s).unwrap();
    t.run(&mut |e| {
        if let TrainEvent::Step(m) = e {
            metrics.push(m.clone());
        }
        Ok(())
    })
    .unwrap();
    (metrics, t.policy().params().to_vec())
}

#[test]
fn same_seed_gives_identical_runs() {
    let (policy, split) = small();
    let a = run(&policy, &split, setup(Mode::P2s, 4, 1));
    let b = run(&policy, &split, setup(Mode::P2s, 4, 1));
    assert_eq!(a.1, b.1);
    assert_eq!(serde_json::to_string(&a.0).unwrap(), serde_json::to_string(&b.0).unwrap());
    let mut other = setup(Mode::P2s, 4, 1);
    other.train.seed += 1;
    assert_ne!(run(&policy, &split, other).1, a.1);
}

#[test]
fn zero_steps_leave_the_policy_untouched() {
    let (policy, split) = small();
    let (metrics, params) = run(&policy, &split, setup(Mode::Grpo, 0, 0));
    assert!(metrics.is_empty());
    assert_eq!(params, policy.params());
}

#[test]
fn warmup_only_ever_assigns_penalty_outcome_or_zero() {
    let (policy, split) = small();
    let (metrics, _) = run(&policy, &split, setup(Mode::P2s, 6, 4));
    for m in &metrics {
        let c = m.cases;
        if m.step < 4 {
            assert_eq!(c.pfr + c.no_gold_zero + c.additive + c.rlpr, 0, "step {}: {c:?}", m.step);
            assert_eq!(m.gold_available, 0);
            assert_eq!(m.scoring_passes, 0);
        } else {
            assert_eq!(c.warmup_zero, 0, "step {}: {c:?}", m.step);
        }
    }
}

#[test]
fn every_trajectory_gets_exactly_one_case() {
    let (policy, split) = small();
    let (metrics, _) = run(&policy, &split, setup(Mode::P2s, 3, 1));
    for m in &metrics {
        let c = m.cases;
        let total = c.format_penalty + c.outcome + c.warmup_zero + c.no_gold_zero + c.pfr + c.additive + c.rlpr;
        assert_eq!(total, 2 * 4);
    }
}
