//! Synthetic chained modular-arithmetic tasks and outcome rewards.
//!
//! A question reads `s op1 b1 op2 b2 ... opd bd`; each operation is applied
//! to the running residue modulo the task's modulus. The hidden derivation
//! lists the residue after every operation and the answer is the last one.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};
use crate::vocab::{Token, Vocab};

/// Arithmetic operator appearing in questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Add,
    Sub,
    Mul,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "+" => Some(Op::Add),
            "-" => Some(Op::Sub),
            "*" => Some(Op::Mul),
            _ => None,
        }
    }

    /// The value `v` with `apply(v, operand) == result`, where it is unique.
    pub fn invert(self, result: u32, operand: u32, modulus: u32) -> Option<u32> {
        match self {
            Op::Add => Some(Op::Sub.apply(result, operand, modulus)),
            Op::Sub => Some(Op::Add.apply(result, operand, modulus)),
            Op::Mul => None,
        }
    }

    pub fn apply(self, value: u32, operand: u32, modulus: u32) -> u32 {
        let (v, b, m) = (value as u64, operand as u64, modulus as u64);
        let r = match self {
            Op::Add => (v + b) % m,
            Op::Sub => (v + m - b % m) % m,
            Op::Mul => (v * b) % m,
        };
        r as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskGenConfig {
    /// Inclusive range of chained operations per question.
    pub difficulty: (u32, u32),
    /// Inclusive range of operands.
    pub operand: (u32, u32),
    pub modulus: u32,
    pub ops: Vec<Op>,
    pub count: usize,
    pub seed: u64,
}

impl Default for TaskGenConfig {
    fn default() -> Self {
        Self {
            difficulty: (2, 2),
            operand: (1, 3),
            modulus: 24,
            ops: vec![Op::Add],
            count: 1000,
            seed: 42,
        }
    }
}

impl TaskGenConfig {
    /// Every violated invariant, as `field: message` strings.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.difficulty.0 < 1 {
            out.push("difficulty: minimum must be >= 1".into());
        }
        if self.difficulty.0 > self.difficulty.1 {
            out.push("difficulty: empty range".into());
        }
        if self.operand.0 > self.operand.1 {
            out.push("operand: empty range".into());
        }
        if self.modulus < 2 {
            out.push("modulus: must be >= 2".into());
        } else if self.operand.1 >= self.modulus {
            out.push("operand: values must be below the modulus".into());
        }
        if self.ops.is_empty() {
            out.push("ops: at least one operator required".into());
        }
        if self.count < 1 {
            out.push("count: must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().as_slice() {
            [] => Ok(()),
            v => Err(P2sError::Config(v.join("; "))),
        }
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::arithmetic(self.modulus)
    }
}

/// One question with its gold answer and hidden derivation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskInstance {
    pub id: usize,
    pub question: Vec<Token>,
    pub answer: Vec<Token>,
    /// Residue after each operation, one single-token sequence per step.
    pub derivation: Vec<Vec<Token>>,
    pub difficulty: u32,
    pub modulus: u32,
}

impl TaskInstance {
    /// The canonical reasoning chain `s ; r1 ; ... ; rd` for this task.
    pub fn reference_reasoning(&self, vocab: &Vocab) -> Vec<Token> {
        let sep = vocab.specials().step_sep;
        let mut out = vec![self.question[0]];
        for step in &self.derivation {
            out.push(sep);
            out.extend_from_slice(step);
        }
        out
    }

    /// Start value and `(operator, operand)` pairs read back from the question tokens.
    pub fn program(&self, vocab: &Vocab) -> Result<(u32, Vec<(Op, u32)>)> {
        let sym = |t: Token| {
            vocab
                .symbol(t)
                .ok_or_else(|| P2sError::Input(format!("token id {} outside vocabulary", t.0)))
        };
        let number = |t: Token| -> Result<u32> {
            sym(t)?
                .parse::<u32>()
                .map_err(|_| P2sError::Input(format!("expected a number, got {:?}", sym(t))))
        };
        let q = &self.question;
        if q.len() != 1 + 2 * self.difficulty as usize {
            return Err(P2sError::Input("question length does not match difficulty".into()));
        }
        let mut steps = Vec::with_capacity(self.difficulty as usize);
        for pair in q[1..].chunks(2) {
            let op = Op::from_symbol(sym(pair[0])?).ok_or_else(|| P2sError::Input("expected an operator".into()))?;
            steps.push((op, number(pair[1])?));
        }
        Ok((number(q[0])?, steps))
    }

    /// Replays the derivation from the question and checks it reaches the answer.
    pub fn verify(&self, vocab: &Vocab) -> Result<()> {
        let (mut value, steps) = self.program(vocab)?;
        if self.derivation.len() != steps.len() {
            return Err(P2sError::Input("derivation length does not match difficulty".into()));
        }
        for (k, (op, operand)) in steps.into_iter().enumerate() {
            value = op.apply(value, operand, self.modulus);
            if self.derivation[k] != [vocab.token(&value.to_string())?] {
                return Err(P2sError::Input(format!("derivation step {} does not replay", k + 1)));
            }
        }
        if self.answer != [vocab.token(&value.to_string())?] {
            return Err(P2sError::Input("derivation does not reach the answer".into()));
        }
        if self.answer.is_empty() || self.answer.iter().any(|t| vocab.is_structural(*t)) {
            return Err(P2sError::Input("answer must be nonempty and tag-free".into()));
        }
        Ok(())
    }
}

fn sample_task(config: &TaskGenConfig, vocab: &Vocab, id: usize, rng: &mut ChaCha8Rng) -> Result<TaskInstance> {
    let num = |n: u32| vocab.token(&n.to_string());
    let difficulty = rng.gen_range(config.difficulty.0..=config.difficulty.1);
    let mut value = rng.gen_range(0..config.modulus);
    let mut question = vec![num(value)?];
    let mut derivation = Vec::with_capacity(difficulty as usize);
    for _ in 0..difficulty {
        let op = config.ops[rng.gen_range(0..config.ops.len())];
        let operand = rng.gen_range(config.operand.0..=config.operand.1);
        question.push(vocab.token(op.symbol())?);
        question.push(num(operand)?);
        value = op.apply(value, operand, config.modulus);
        derivation.push(vec![num(value)?]);
    }
    Ok(TaskInstance {
        id,
        question,
        answer: vec![num(value)?],
        derivation,
        difficulty,
        modulus: config.modulus,
    })
}

/// Draws `config.count` independent tasks; a pure function of the config.
pub fn generate_tasks(config: &TaskGenConfig) -> Result<Vec<TaskInstance>> {
    config.validate()?;
    let vocab = config.vocab()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.count)
        .map(|id| sample_task(config, &vocab, id, &mut rng))
        .collect()
}

/// Disjoint train and held-out splits.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    pub train: Vec<TaskInstance>,
    pub test: Vec<TaskInstance>,
}

/// Draws `config.count + test_count` tasks with pairwise-distinct questions
/// and partitions them, so no held-out question is ever trained on.
pub fn generate_split(config: &TaskGenConfig, test_count: usize) -> Result<TaskSplit> {
    config.validate()?;
    let vocab = config.vocab()?;
    let want = config.count + test_count;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(want);
    let mut attempts = 0usize;
    while tasks.len() < want {
        attempts += 1;
        if attempts > want * 1000 {
            return Err(P2sError::Config(format!(
                "question space too small for {want} distinct tasks"
            )));
        }
        let task = sample_task(config, &vocab, tasks.len(), &mut rng)?;
        if seen.insert(task.question.clone()) {
            tasks.push(task);
        }
    }
    let test = tasks.split_off(config.count);
    Ok(TaskSplit { train: tasks, test })
}

fn counts(tokens: &[Token]) -> HashMap<Token, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(*t).or_insert(0) += 1;
    }
    m
}

/// Unigram-overlap F1 (ROUGE-1 F1) with clipped multiset counts.
pub fn outcome_reward_f1(y: &[Token], y_star: &[Token]) -> f64 {
    if y.is_empty() || y_star.is_empty() {
        return 0.0;
    }
    let (a, b) = (counts(y), counts(y_star));
    let overlap: usize = a.iter().map(|(t, n)| (*n).min(*b.get(t).unwrap_or(&0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / y.len() as f64;
    let recall = overlap as f64 / y_star.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// 1 when the sequences are identical, else 0.
pub fn outcome_reward_exact(y: &[Token], y_star: &[Token]) -> f64 {
    if y == y_star {
        1.0
    } else {
        0.0
    }
}

/// Line format of a task corpus file; see `docs/task-corpus.schema.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: usize,
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub derivation: Vec<Vec<String>>,
    pub difficulty: u32,
    pub modulus: u32,
}

impl TaskRecord {
    pub fn from_task(task: &TaskInstance, vocab: &Vocab) -> Self {
        let words = |ts: &[Token]| ts.iter().map(|t| vocab.symbol(*t).unwrap_or("<?>").to_string()).collect();
        Self {
            id: task.id,
            question: words(&task.question),
            answer: words(&task.answer),
            derivation: task.derivation.iter().map(|d| words(d)).collect(),
            difficulty: task.difficulty,
            modulus: task.modulus,
        }
    }

    pub fn into_task(self, vocab: &Vocab) -> Result<TaskInstance> {
        let toks = |ws: &[String]| ws.iter().map(|w| vocab.token(w)).collect::<Result<Vec<_>>>();
        Ok(TaskInstance {
            id: self.id,
            question: toks(&self.question)?,
            answer: toks(&self.answer)?,
            derivation: self.derivation.iter().map(|d| toks(d)).collect::<Result<_>>()?,
            difficulty: self.difficulty,
            modulus: self.modulus,
        })
    }
}

pub fn write_tasks<W: Write>(mut out: W, tasks: &[TaskInstance], vocab: &Vocab) -> Result<()> {
    for task in tasks {
        serde_json::to_writer(&mut out, &TaskRecord::from_task(task, vocab))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tasks<R: BufRead>(input: R, vocab: &Vocab) -> Result<Vec<TaskInstance>> {
    let mut tasks = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line)
            .map_err(|e| P2sError::Input(format!("line {}: {e}", n + 1)))?;
        tasks.push(record.into_task(vocab)?);
    }
    Ok(tasks)
}
