//! Token alphabet shared by tasks, policies and reward computations.
//!
//! Tokens are atomic, whitespace-delimited symbols. The structural tags,
//! the mask, the hint separator, the step separator and end-of-sequence
//! are single vocabulary entries, never spelled out of characters.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{P2sError, Result};

/// Index of a symbol in a [`Vocab`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u32);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANS_OPEN: &str = "<answer>";
pub const ANS_CLOSE: &str = "</answer>";
pub const MASK: &str = "<mask>";
pub const HINT: &str = "<hint>";
pub const EOS: &str = "<eos>";
pub const STEP_SEP: &str = ";";

/// Ids of the tokens with structural meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Specials {
    pub think_open: Token,
    pub think_close: Token,
    pub ans_open: Token,
    pub ans_close: Token,
    pub mask: Token,
    pub hint: Token,
    pub eos: Token,
    pub step_sep: Token,
}

/// Ordered list of distinct symbols.
#[derive(Debug, Clone)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, Token>,
    specials: Specials,
}

impl Vocab {
    /// Builds a vocabulary from `symbols` plus the reserved structural tokens,
    /// which are appended when not already present.
    pub fn new<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut list: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        let push = |s: String, list: &mut Vec<String>, index: &mut HashMap<String, Token>| -> Result<()> {
            if s.is_empty() || s.chars().any(char::is_whitespace) {
                return Err(P2sError::Config(format!("invalid token symbol {s:?}")));
            }
            if index.contains_key(&s) {
                return Err(P2sError::Config(format!("duplicate token symbol {s:?}")));
            }
            index.insert(s.clone(), Token(list.len() as u32));
            list.push(s);
            Ok(())
        };
        for s in symbols {
            push(s.into(), &mut list, &mut index)?;
        }
        for reserved in [THINK_OPEN, THINK_CLOSE, ANS_OPEN, ANS_CLOSE, MASK, HINT, EOS, STEP_SEP] {
            if !index.contains_key(reserved) {
                push(reserved.to_string(), &mut list, &mut index)?;
            }
        }
        let specials = Specials {
            think_open: index[THINK_OPEN],
            think_close: index[THINK_CLOSE],
            ans_open: index[ANS_OPEN],
            ans_close: index[ANS_CLOSE],
            mask: index[MASK],
            hint: index[HINT],
            eos: index[EOS],
            step_sep: index[STEP_SEP],
        };
        Ok(Self { symbols: list, index, specials })
    }

    /// Vocabulary for chained modular arithmetic: the residues `0..modulus`,
    /// the operators, a handful of letter tokens and the reserved symbols.
    pub fn arithmetic(modulus: u32) -> Result<Self> {
        if modulus < 2 {
            return Err(P2sError::Config("modulus must be at least 2".into()));
        }
        let numbers = (0..modulus).map(|n| n.to_string());
        let rest = ["+", "-", "*", "a", "b", "c", "d"].into_iter().map(String::from);
        Self::new(numbers.chain(rest))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn symbol(&self, token: Token) -> Option<&str> {
        self.symbols.get(token.index()).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn token(&self, symbol: &str) -> Result<Token> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| P2sError::Input(format!("unknown token {symbol:?}")))
    }

    pub fn contains(&self, token: Token) -> bool {
        token.index() < self.symbols.len()
    }

    /// Rejects any token id outside the vocabulary.
    pub fn check(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|t| !self.contains(**t)) {
            Some(t) => Err(P2sError::Input(format!(
                "token id {} outside vocabulary of size {}",
                t.0,
                self.len()
            ))),
            None => Ok(()),
        }
    }

    /// True for the four tags and end-of-sequence.
    pub fn is_structural(&self, token: Token) -> bool {
        let s = self.specials;
        [s.think_open, s.think_close, s.ans_open, s.ans_close, s.eos].contains(&token)
    }

    /// Splits on whitespace and maps every piece to its token.
    pub fn encode(&self, text: &str) -> Result<Vec<Token>> {
        text.split_whitespace().map(|s| self.token(s)).collect()
    }

    pub fn decode(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|t| self.symbol(*t).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Stable fingerprint of the ordered symbol list, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.symbols {
            hasher.update(s.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

impl fmt::Display for Vocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbols.join(" "))
    }
}
