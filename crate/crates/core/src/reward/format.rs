use crate::vocab::{Token, Vocab};

/// Reasoning chain `z`, answer `y` and the format indicator F(i).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedResponse {
    pub reasoning: Vec<Token>,
    pub answer: Vec<Token>,
    pub format_ok: bool,
}

/// Accepts exactly `<think> z </think> <answer> y </answer>` with an optional
/// trailing end-of-sequence, a nonempty `y`, and no tags inside `z` or `y`.
pub fn parse_format(response: &[Token], vocab: &Vocab) -> ParsedResponse {
    let s = vocab.specials();
    let body = match response.split_last() {
        Some((last, rest)) if *last == s.eos => rest,
        _ => response,
    };
    let parsed = (|| {
        let (first, rest) = body.split_first()?;
        let (last, rest) = rest.split_last()?;
        if *first != s.think_open || *last != s.ans_close {
            return None;
        }
        let close = rest.iter().position(|t| *t == s.think_close)?;
        let (z, tail) = rest.split_at(close);
        let y = tail.get(1..)?.strip_prefix(&[s.ans_open])?;
        let clean = |xs: &[Token]| xs.iter().all(|t| !vocab.is_structural(*t));
        if y.is_empty() || !clean(z) || !clean(y) {
            return None;
        }
        Some((z.to_vec(), y.to_vec()))
    })();
    match parsed {
        Some((reasoning, answer)) => ParsedResponse { reasoning, answer, format_ok: true },
        None => ParsedResponse::default(),
    }
}

/// `q <think> prefix`: the context a reasoning prefix is continued from.
pub fn reasoning_context(vocab: &Vocab, question: &[Token], prefix: &[Token]) -> Vec<Token> {
    let mut ctx = Vec::with_capacity(question.len() + prefix.len() + 1);
    ctx.extend_from_slice(question);
    ctx.push(vocab.specials().think_open);
    ctx.extend_from_slice(prefix);
    ctx
}

/// `q <think> z </think> <answer>`: the context an answer is generated from.
pub fn answer_context(vocab: &Vocab, question: &[Token], reasoning: &[Token]) -> Vec<Token> {
    let s = vocab.specials();
    let mut ctx = reasoning_context(vocab, question, reasoning);
    ctx.push(s.think_close);
    ctx.push(s.ans_open);
    ctx
}
