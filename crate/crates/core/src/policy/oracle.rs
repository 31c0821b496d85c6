//! Table-driven policy with exactly known conditional probabilities.

use std::collections::HashMap;

use crate::error::{P2sError, Result};
use crate::policy::{ForwardCounter, PolicyModel};
use crate::vocab::{Token, Vocab};

const SUM_TOLERANCE: f64 = 1e-12;

/// Conditional-probability table keyed by context suffixes of length at most
/// `order`. Lookup backs off from the longest matching suffix to the empty
/// key, which holds the fallback distribution.
#[derive(Debug)]
pub struct OraclePolicy {
    vocab: Vocab,
    order: usize,
    table: HashMap<Vec<Token>, Vec<f64>>,
    counter: ForwardCounter,
}

impl OraclePolicy {
    pub fn order(&self) -> usize {
        self.order
    }

    /// The stored probability row for an exact key, if any.
    pub fn row(&self, key: &[Token]) -> Option<Vec<f64>> {
        self.table.get(key).map(|row| row.iter().map(|l| l.exp()).collect())
    }
}

impl PolicyModel for OraclePolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_log_probs(&self, context: &[Token]) -> Vec<f64> {
        let longest = self.order.min(context.len());
        for k in (0..=longest).rev() {
            if let Some(row) = self.table.get(&context[context.len() - k..]) {
                return row.clone();
            }
        }
        unreachable!("builder always installs the empty-context row")
    }

    fn counter(&self) -> &ForwardCounter {
        &self.counter
    }
}

/// Assembles an [`OraclePolicy`] from symbol-level rules.
pub struct OracleBuilder {
    vocab: Vocab,
    order: usize,
    rows: Vec<(Vec<Token>, Vec<f64>)>,
    fallback: Option<Vec<f64>>,
    error: Option<P2sError>,
}

impl OracleBuilder {
    pub fn new(vocab: Vocab, order: usize) -> Self {
        Self { vocab, order, rows: Vec::new(), fallback: None, error: None }
    }

    fn dist(&mut self, entries: &[(&str, f64)]) -> Option<Vec<f64>> {
        let mut probs = vec![0.0; self.vocab.len()];
        for (sym, p) in entries {
            match self.vocab.token(sym) {
                Ok(t) => probs[t.index()] += p,
                Err(e) => {
                    self.error.get_or_insert(e);
                    return None;
                }
            }
        }
        Some(probs)
    }

    /// Adds the distribution following the whitespace-separated context `ctx`.
    pub fn rule(mut self, ctx: &str, entries: &[(&str, f64)]) -> Self {
        let key = match self.vocab.encode(ctx) {
            Ok(k) => k,
            Err(e) => {
                self.error.get_or_insert(e);
                return self;
            }
        };
        if let Some(p) = self.dist(entries) {
            self.rows.push((key, p));
        }
        self
    }

    /// Adds a row keyed by token ids with a dense probability vector.
    pub fn row(mut self, key: Vec<Token>, probs: Vec<f64>) -> Self {
        self.rows.push((key, probs));
        self
    }

    pub fn fallback(mut self, entries: &[(&str, f64)]) -> Self {
        self.fallback = self.dist(entries);
        self
    }

    pub fn fallback_probs(mut self, probs: Vec<f64>) -> Self {
        self.fallback = Some(probs);
        self
    }

    pub fn uniform(mut self) -> Self {
        let n = self.vocab.len();
        self.fallback = Some(vec![1.0 / n as f64; n]);
        self
    }

    pub fn build(self) -> Result<OraclePolicy> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let n = self.vocab.len();
        let fallback = self.fallback.unwrap_or_else(|| vec![1.0 / n as f64; n]);
        let mut table = HashMap::new();
        for (key, probs) in std::iter::once((Vec::new(), fallback)).chain(self.rows) {
            if key.len() > self.order {
                return Err(P2sError::Config(format!(
                    "context of length {} exceeds order {}",
                    key.len(),
                    self.order
                )));
            }
            self.vocab.check(&key)?;
            if probs.len() != n || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(P2sError::Config("distribution must be nonnegative over the vocabulary".into()));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > SUM_TOLERANCE {
                return Err(P2sError::Config(format!("distribution sums to {total}, not 1")));
            }
            table.insert(key, probs.iter().map(|p| p.ln()).collect());
        }
        Ok(OraclePolicy { vocab: self.vocab, order: self.order, table, counter: ForwardCounter::default() })
    }
}
