//! Random bigram fixtures and brute-force reward computations that read the
//! probability table directly instead of going through the policy API.
#![allow(dead_code)]

pub mod grad;

use p2s_core::goldcot::GoldCot;
use p2s_core::policy::{OracleBuilder, OraclePolicy};
use p2s_core::reward::ParsedResponse;
use p2s_core::vocab::{Token, Vocab};
use rand::Rng;

pub struct Fixture {
    pub vocab: Vocab,
    pub policy: OraclePolicy,
    /// `table[a][b]` = P(b | previous token a).
    pub table: Vec<Vec<f64>>,
    pub question: Vec<Token>,
    pub reasoning: Vec<Token>,
    pub gold: Vec<Token>,
    pub y_star: Vec<Token>,
    pub max_step_num: usize,
}

fn content<R: Rng>(rng: &mut R, alphabet: &[Token], lo: usize, hi: usize) -> Vec<Token> {
    let n = rng.gen_range(lo..=hi);
    (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

pub fn fixture<R: Rng>(rng: &mut R) -> Fixture {
    let n_content = rng.gen_range(2..=4);
    let vocab = Vocab::new(["a", "b", "c", "d"].into_iter().take(n_content)).unwrap();
    let n = vocab.len();
    let table: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|x| x / s).collect()
        })
        .collect();
    let mut b = OracleBuilder::new(vocab.clone(), 1);
    for (a, row) in table.iter().enumerate() {
        b = b.row(vec![Token(a as u32)], row.clone());
    }
    let policy = b.uniform().build().unwrap();
    let alphabet: Vec<Token> = (0..n_content as u32).map(Token).collect();
    Fixture {
        question: content(rng, &alphabet, 1, 2),
        reasoning: content(rng, &alphabet, 1, 5),
        gold: content(rng, &alphabet, 1, 5),
        y_star: content(rng, &alphabet, 1, 2),
        max_step_num: rng.gen_range(1..=4),
        vocab,
        policy,
        table,
    }
}

impl Fixture {
    pub fn sym(&self, s: &str) -> Token {
        self.vocab.token(s).unwrap()
    }

    /// Product of table entries along `context ++ continuation`, over the continuation only.
    pub fn log_prob(&self, context: &[Token], continuation: &[Token]) -> f64 {
        let mut prev = *context.last().expect("nonempty context");
        let mut p = 1.0;
        for &t in continuation {
            p *= self.table[prev.index()][t.index()];
            prev = t;
        }
        p.ln()
    }

    pub fn gold_cot(&self) -> GoldCot {
        let parsed = ParsedResponse { reasoning: self.gold.clone(), answer: self.y_star.clone(), format_ok: true };
        GoldCot::new(parsed, 0.0, 0, 0, self.max_step_num).unwrap()
    }

    /// `q <think> prefix`.
    pub fn think(&self, prefix: &[Token]) -> Vec<Token> {
        let mut v = self.question.clone();
        v.push(self.sym("<think>"));
        v.extend_from_slice(prefix);
        v
    }

    pub fn brute_rlpr(&self, z: &[Token]) -> f64 {
        let mut ctx = self.think(z);
        ctx.push(self.sym("</think>"));
        ctx.push(self.sym("<answer>"));
        self.log_prob(&ctx, &self.y_star)
    }
}

/// Start offsets of an even split of `len` tokens into `min(m, len)` steps,
/// longer steps first.
pub fn step_starts(len: usize, m: usize) -> Vec<usize> {
    let k = m.min(len);
    let mut starts = Vec::new();
    let mut at = 0;
    for i in 0..k {
        starts.push(at);
        at += len / k + usize::from(i < len % k);
    }
    starts
}

/// Raw gain of every gold suffix over the masked prefix, in step order.
pub fn brute_gains(f: &Fixture, prefix: &[Token]) -> Vec<f64> {
    let with = f.think(prefix);
    let masked = f.think(&vec![f.sym("<mask>"); prefix.len()]);
    step_starts(f.gold.len(), f.max_step_num)
        .iter()
        .map(|&s| f.log_prob(&with, &f.gold[s..]) - f.log_prob(&masked, &f.gold[s..]))
        .collect()
}

/// Raw-mode step reward with the 1-based index of the first maximiser.
pub fn brute_step(f: &Fixture, prefix: &[Token]) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (t, gain) in brute_gains(f, prefix).into_iter().enumerate() {
        if gain > best.0 {
            best = (gain, t + 1);
        }
    }
    best
}
