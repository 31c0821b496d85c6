//! Small random networks and central finite differences.

use p2s_core::grpo::{GroupBatch, Trajectory};
use p2s_core::policy::{token_logprobs, NeuralConfig, NeuralPolicy, PolicyModel};
use p2s_core::vocab::{Token, Vocab};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

pub fn random_policy(rng: &mut ChaCha8Rng) -> NeuralPolicy {
    let n = rng.gen_range(2..=4);
    let vocab = Vocab::new(["a", "b", "c", "d"].into_iter().take(n)).unwrap();
    let cfg = NeuralConfig {
        embed_dim: rng.gen_range(2..=4),
        window: rng.gen_range(2..=4),
        hidden: rng.gen_range(2..=5),
        init_scale: 1.0,
        seed: rng.gen(),
    };
    NeuralPolicy::new(vocab, cfg).unwrap()
}

pub fn perturbed(p: &NeuralPolicy, rng: &mut ChaCha8Rng, scale: f64) -> NeuralPolicy {
    let mut q = p.fork();
    let params: Vec<f64> = p.params().iter().map(|x| x + rng.gen_range(-scale..scale)).collect();
    q.set_params(&params).unwrap();
    q
}

pub fn tokens(rng: &mut ChaCha8Rng, n_vocab: usize, lo: usize, hi: usize) -> Vec<Token> {
    (0..rng.gen_range(lo..=hi)).map(|_| Token(rng.gen_range(0..n_vocab as u32))).collect()
}

pub fn fd<F: Fn(&NeuralPolicy) -> f64>(p: &NeuralPolicy, j: usize, f: F) -> f64 {
    let mut params = p.params().to_vec();
    let x = params[j];
    let mut q = p.fork();
    params[j] = x + H;
    q.set_params(&params).unwrap();
    let up = f(&q);
    params[j] = x - H;
    q.set_params(&params).unwrap();
    let down = f(&q);
    (up - down) / (2.0 * H)
}

/// A random group whose ratios all sit at least `margin` away from the clip edges.
pub fn random_batch(
    p: &NeuralPolicy,
    old: &NeuralPolicy,
    rng: &mut ChaCha8Rng,
    eps: f64,
) -> Option<GroupBatch> {
    let n = p.vocab().len();
    let prompt = tokens(rng, n, 1, 3);
    let mut trajectories = Vec::new();
    for _ in 0..rng.gen_range(2..=4) {
        let response = tokens(rng, n, 1, 4);
        let old_logprobs = token_logprobs(old, &response, &prompt);
        let new = token_logprobs(p, &response, &prompt);
        for (a, b) in new.iter().zip(&old_logprobs) {
            let rho = (a - b).exp();
            if (rho - (1.0 - eps)).abs() < 1e-3 || (rho - (1.0 + eps)).abs() < 1e-3 {
                return None;
            }
        }
        trajectories.push(Trajectory { prompt: prompt.clone(), response, old_logprobs, advantage: rng.gen_range(-2.0..2.0) });
    }
    Some(GroupBatch {
        task_id: 0,
        question: prompt,
        answer: Vec::new(),
        trajectories,
        breakdowns: Vec::new(),
        rewards: Vec::new(),
        mean: 0.0,
        std: 1.0,
        group_success: false,
        old_version: old.version(),
    })
}

