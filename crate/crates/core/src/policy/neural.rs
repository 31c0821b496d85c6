//! Windowed feed-forward softmax policy with hand-derived gradients.
//!
//! The last `window` tokens are embedded and concatenated (missing slots at
//! the start of a sequence are zero vectors), passed through one tanh hidden
//! layer, and projected to vocabulary logits.
//!
//! Parameters live in one flat vector laid out as
//! `[embeddings V*d | W1 H*(w*d) | b1 H | W2 V*H | b2 V]`.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};
use crate::policy::{ForwardCounter, PolicyModel};
use crate::vocab::{Token, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralConfig {
    pub embed_dim: usize,
    pub window: usize,
    pub hidden: usize,
    /// Scale of the output projection at initialization; small values start near uniform.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self { embed_dim: 16, window: 8, hidden: 64, init_scale: 0.1, seed: 42 }
    }
}

impl NeuralConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.embed_dim == 0 {
            out.push("policy.embed_dim: must be >= 1".to_string());
        }
        if self.window == 0 {
            out.push("policy.window: must be >= 1".to_string());
        }
        if self.hidden == 0 {
            out.push("policy.hidden: must be >= 1".to_string());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            out.push("policy.init_scale: must be finite and >= 0".to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    vocab: usize,
    dim: usize,
    window: usize,
    hidden: usize,
}

impl Layout {
    fn input(&self) -> usize {
        self.dim * self.window
    }
    fn emb(&self) -> usize {
        0
    }
    fn w1(&self) -> usize {
        self.vocab * self.dim
    }
    fn b1(&self) -> usize {
        self.w1() + self.hidden * self.input()
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.vocab * self.hidden
    }
    fn total(&self) -> usize {
        self.b2() + self.vocab
    }
}

/// Immutable copy of the parameters with the version they were taken at.
#[derive(Debug, Clone)]
pub struct ParamSnapshot {
    params: Arc<Vec<f64>>,
    version: u64,
}

impl ParamSnapshot {
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }
}

/// Intermediate activations of one forward pass, kept for backpropagation.
pub(crate) struct ForwardCache {
    slots: Vec<Option<Token>>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub(crate) logp: Vec<f64>,
}

pub struct NeuralPolicy {
    vocab: Arc<Vocab>,
    config: NeuralConfig,
    layout: Layout,
    params: Arc<Vec<f64>>,
    version: u64,
    counter: Arc<ForwardCounter>,
}

impl std::fmt::Debug for NeuralPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeuralPolicy")
            .field("config", &self.config)
            .field("num_params", &self.params.len())
            .field("version", &self.version)
            .finish()
    }
}

impl NeuralPolicy {
    pub fn new(vocab: Vocab, config: NeuralConfig) -> Result<Self> {
        if let Some(v) = config.violations().first() {
            return Err(P2sError::Config(v.clone()));
        }
        if vocab.is_empty() {
            return Err(P2sError::Config("empty vocabulary".into()));
        }
        let layout = Layout { vocab: vocab.len(), dim: config.embed_dim, window: config.window, hidden: config.hidden };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.total()];
        let in_scale = (3.0 / layout.input() as f64).sqrt();
        for p in &mut params[layout.emb()..layout.w1()] {
            *p = rng.gen_range(-1.0..1.0);
        }
        for p in &mut params[layout.w1()..layout.b1()] {
            *p = rng.gen_range(-in_scale..in_scale);
        }
        for p in &mut params[layout.w2()..layout.b2()] {
            *p = rng.gen_range(-1.0..1.0) * config.init_scale;
        }
        Ok(Self {
            vocab: Arc::new(vocab),
            config,
            layout,
            params: Arc::new(params),
            version: 0,
            counter: Arc::new(ForwardCounter::default()),
        })
    }

    pub fn config(&self) -> NeuralConfig {
        self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot { params: Arc::clone(&self.params), version: self.version }
    }

    /// A read-only policy over `snapshot` sharing this policy's vocabulary and counter.
    pub fn view(&self, snapshot: &ParamSnapshot) -> NeuralPolicy {
        NeuralPolicy {
            vocab: Arc::clone(&self.vocab),
            config: self.config,
            layout: self.layout,
            params: Arc::clone(&snapshot.params),
            version: snapshot.version,
            counter: Arc::clone(&self.counter),
        }
    }

    /// An independent copy of the current parameters with a fresh forward counter.
    pub fn fork(&self) -> NeuralPolicy {
        NeuralPolicy { counter: Arc::new(ForwardCounter::default()), ..self.view(&self.snapshot()) }
    }

    /// Mutates the parameters in place; outstanding snapshots are unaffected.
    pub fn update<F: FnOnce(&mut [f64])>(&mut self, f: F) {
        f(Arc::make_mut(&mut self.params).as_mut_slice());
        self.version += 1;
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(P2sError::Input(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.update(|p| p.copy_from_slice(params));
        Ok(())
    }

    pub(crate) fn forward(&self, context: &[Token]) -> ForwardCache {
        let l = self.layout;
        let p = &self.params[..];
        let start = context.len().saturating_sub(l.window);
        let pad = l.window - (context.len() - start);
        let slots: Vec<Option<Token>> = std::iter::repeat(None)
            .take(pad)
            .chain(context[start..].iter().map(|t| Some(*t)))
            .collect();
        let mut input = vec![0.0; l.input()];
        for (s, tok) in slots.iter().enumerate() {
            if let Some(tok) = tok {
                let e = l.emb() + tok.index() * l.dim;
                input[s * l.dim..(s + 1) * l.dim].copy_from_slice(&p[e..e + l.dim]);
            }
        }
        let mut hidden = vec![0.0; l.hidden];
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &p[l.w1() + j * l.input()..l.w1() + (j + 1) * l.input()];
            let a: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>() + p[l.b1() + j];
            *h = a.tanh();
        }
        let mut logits = vec![0.0; l.vocab];
        for (v, z) in logits.iter_mut().enumerate() {
            let row = &p[l.w2() + v * l.hidden..l.w2() + (v + 1) * l.hidden];
            *z = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + p[l.b2() + v];
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let logp = logits.iter().map(|z| z - lse).collect();
        ForwardCache { slots, input, hidden, logp }
    }

    /// Adds `scale * d(objective)/d(theta)` to `grad`, given `dlogits`, the
    /// objective's derivative with respect to the logits of `cache`.
    pub(crate) fn backprop(&self, cache: &ForwardCache, dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        let l = self.layout;
        let p = &self.params[..];
        let mut dh = vec![0.0; l.hidden];
        for (v, dz) in dlogits.iter().enumerate() {
            let dz = dz * scale;
            if dz == 0.0 {
                continue;
            }
            grad[l.b2() + v] += dz;
            let off = l.w2() + v * l.hidden;
            for j in 0..l.hidden {
                grad[off + j] += dz * cache.hidden[j];
                dh[j] += dz * p[off + j];
            }
        }
        let mut dx = vec![0.0; l.input()];
        for j in 0..l.hidden {
            let da = dh[j] * (1.0 - cache.hidden[j] * cache.hidden[j]);
            if da == 0.0 {
                continue;
            }
            grad[l.b1() + j] += da;
            let off = l.w1() + j * l.input();
            for k in 0..l.input() {
                grad[off + k] += da * cache.input[k];
                dx[k] += da * p[off + k];
            }
        }
        for (s, tok) in cache.slots.iter().enumerate() {
            if let Some(tok) = tok {
                let e = l.emb() + tok.index() * l.dim;
                for i in 0..l.dim {
                    grad[e + i] += dx[s * l.dim + i];
                }
            }
        }
    }

    /// Adds `scale * grad log pi(target | context)` to `grad`.
    pub(crate) fn accumulate_token_grad(&self, context: &[Token], target: Token, scale: f64, grad: &mut [f64]) -> f64 {
        let cache = self.forward(context);
        let mut dlogits: Vec<f64> = cache.logp.iter().map(|l| -l.exp()).collect();
        dlogits[target.index()] += 1.0;
        self.backprop(&cache, &dlogits, scale, grad);
        cache.logp[target.index()]
    }

    /// Gradient of `logprob(continuation | context)` with respect to the flat parameters.
    pub fn grad_logprob(&self, continuation: &[Token], context: &[Token]) -> Result<Vec<f64>> {
        if continuation.is_empty() {
            return Err(P2sError::Input("continuation must be nonempty".into()));
        }
        self.vocab.check(continuation)?;
        self.vocab.check(context)?;
        let mut grad = vec![0.0; self.params.len()];
        let mut buf = context.to_vec();
        for tok in continuation {
            self.accumulate_token_grad(&buf, *tok, 1.0, &mut grad);
            buf.push(*tok);
        }
        Ok(grad)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            vocab_fingerprint: self.vocab.fingerprint(),
            vocab_size: self.vocab.len(),
            config: self.config,
            version: self.version,
            params: self.params.to_vec(),
        }
    }

    pub fn from_checkpoint(checkpoint: Checkpoint, vocab: Vocab) -> Result<Self> {
        if checkpoint.format != CHECKPOINT_FORMAT {
            return Err(P2sError::Checkpoint(format!("unknown format {:?}", checkpoint.format)));
        }
        if checkpoint.vocab_fingerprint != vocab.fingerprint() || checkpoint.vocab_size != vocab.len() {
            return Err(P2sError::Checkpoint("vocabulary hash mismatch".into()));
        }
        let mut policy = Self::new(vocab, checkpoint.config)?;
        if checkpoint.params.len() != policy.num_params() {
            return Err(P2sError::Checkpoint(format!(
                "expected {} parameters for the stored dimensions, found {}",
                policy.num_params(),
                checkpoint.params.len()
            )));
        }
        policy.params = Arc::new(checkpoint.params);
        policy.version = checkpoint.version;
        Ok(policy)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, &self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path, vocab: Vocab) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let checkpoint: Checkpoint = serde_json::from_reader(file)?;
        Self::from_checkpoint(checkpoint, vocab)
    }
}

impl PolicyModel for NeuralPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_log_probs(&self, context: &[Token]) -> Vec<f64> {
        self.forward(context).logp
    }

    fn counter(&self) -> &ForwardCounter {
        &self.counter
    }
}

pub const CHECKPOINT_FORMAT: &str = "p2s-neural-v1";

/// Serialized parameters with the header needed to validate a reload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub vocab_fingerprint: String,
    pub vocab_size: usize,
    pub config: NeuralConfig,
    pub version: u64,
    pub params: Vec<f64>,
}
