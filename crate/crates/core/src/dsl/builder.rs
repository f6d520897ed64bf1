//! Stack-based RPN construction and the formal-legality rules behind action
//! masking.
//!
//! A partial sequence is replayed onto a stack of slots (expression,
//! constant, or time-delta). Every transition is checked as it happens, so a
//! prefix is rejected at the first token that can never be part of a legal
//! formula. Masking additionally looks ahead: a token is offered only when
//! the shortest completion of the resulting stack still fits under the
//! length cap.

use super::expr::Expr;
use super::token::{OpCategory, Token, Vocabulary, MAX_TOKENS};
use super::DslError;

/// What a stack slot holds, without its payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    /// A non-constant (feature-bearing) expression.
    Expr,
    Constant,
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Slot {
    Expr(Expr),
    Constant(f64),
    Delta(usize),
}

impl Slot {
    pub fn kind(&self) -> SlotKind {
        match self {
            Slot::Expr(_) => SlotKind::Expr,
            Slot::Constant(_) => SlotKind::Constant,
            Slot::Delta(_) => SlotKind::Delta,
        }
    }
}

/// Checks `token` against the top of `stack` and applies its effect on the
/// slot kinds. Begin markers are handled by the callers.
fn apply_kind(stack: &mut Vec<SlotKind>, token: &Token) -> Result<(), &'static str> {
    use SlotKind::*;
    let top = stack.last().copied();
    match token {
        Token::Begin => return Err("begin marker inside a sequence"),
        Token::Sep => {
            return if stack.as_slice() == [Expr] {
                Ok(())
            } else {
                Err("separator before a single complete expression")
            };
        }
        Token::Feature(_) | Token::Constant(_) if top == Some(Delta) => {
            return Err("time-delta must be consumed by a time-series operator")
        }
        Token::Feature(_) => stack.push(Expr),
        Token::Constant(_) => stack.push(Constant),
        Token::Delta(_) => {
            if top != Some(Expr) {
                return Err("time-delta must follow an expression operand");
            }
            stack.push(Delta);
        }
        Token::Op(op) => {
            let spec = op.spec();
            match spec.category {
                OpCategory::CrossSection => {
                    if stack.len() < spec.operand_arity {
                        return Err("operator arity underflow");
                    }
                    let operands = &stack[stack.len() - spec.operand_arity..];
                    if operands.contains(&Delta) {
                        return Err("time-delta used as an expression operand");
                    }
                    if operands.iter().all(|k| *k == Constant) {
                        return Err("operator applied to constants only folds to a constant");
                    }
                    stack.truncate(stack.len() - spec.operand_arity);
                }
                OpCategory::TimeSeries => {
                    if top != Some(Delta) {
                        return Err("time-series operator needs a time-delta last");
                    }
                    if stack.len() < spec.operand_arity + 1 {
                        return Err("operator arity underflow");
                    }
                    let operands = &stack[stack.len() - 1 - spec.operand_arity..stack.len() - 1];
                    if operands.iter().any(|k| *k != Expr) {
                        return Err("time-series operand must be a non-constant expression");
                    }
                    stack.truncate(stack.len() - 1 - spec.operand_arity);
                }
            }
            stack.push(Expr);
        }
    }
    Ok(())
}

/// Fewest tokens (including the separator) that turn `stack` into a legal
/// complete formula, or `None` if no completion exists.
///
/// Only the top of the stack can be reduced. An expression on top absorbs
/// every slot below it with one binary operator each; a constant on top
/// needs an expression directly beneath it, otherwise a feature must be
/// pushed first. A pending time-delta forces a time-series operator now.
pub fn min_completion(stack: &[SlotKind]) -> Option<usize> {
    use SlotKind::*;
    let s = stack.len();
    match stack.last() {
        None => Some(2),
        Some(Expr) => Some(s),
        Some(Constant) => {
            if s >= 2 && stack[s - 2] == Expr {
                Some(s)
            } else {
                Some(s + 2)
            }
        }
        Some(Delta) => {
            let below = &stack[..s - 1];
            let mut best = None;
            if below.last() == Some(&Expr) {
                best = min_completion(below).map(|c| c + 1);
            }
            if below.len() >= 2 && below[below.len() - 2..] == [Expr, Expr] {
                let pair = min_completion(&below[..below.len() - 1]).map(|c| c + 1);
                best = match (best, pair) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
            best
        }
    }
}

/// Replays a prefix that starts with the begin marker into slot kinds.
/// Returns the stack and whether the prefix was closed by a separator.
fn replay_kinds(prefix: &[Token], cap: usize) -> Result<(Vec<SlotKind>, bool), DslError> {
    if prefix.first() != Some(&Token::Begin) {
        return Err(DslError::rpn(0, prefix.first(), "sequence must start with BEG"));
    }
    if prefix.len() > cap {
        return Err(DslError::rpn(cap, prefix.get(cap), "sequence exceeds the length cap"));
    }
    let mut stack = Vec::new();
    for (i, tok) in prefix.iter().enumerate().skip(1) {
        if i > 1 && prefix[i - 1] == Token::Sep {
            return Err(DslError::rpn(i, Some(tok), "token after separator"));
        }
        apply_kind(&mut stack, tok).map_err(|m| DslError::rpn(i, Some(tok), m))?;
    }
    Ok((stack, prefix.last() == Some(&Token::Sep) && prefix.len() > 1))
}

/// Action mask for the next token after `prefix` under the default cap.
pub fn valid_next_tokens(prefix: &[Token], vocab: &Vocabulary) -> Result<Vec<bool>, DslError> {
    valid_next_tokens_with_cap(prefix, vocab, MAX_TOKENS)
}

/// Tokens whose appending keeps a legal completion within `cap` tokens.
/// A closed (separator-terminated) prefix admits nothing.
pub fn valid_next_tokens_with_cap(prefix: &[Token], vocab: &Vocabulary, cap: usize) -> Result<Vec<bool>, DslError> {
    let (stack, closed) = replay_kinds(prefix, cap)?;
    if closed {
        return Ok(vec![false; vocab.len()]);
    }
    let remaining = cap - prefix.len();
    let mut scratch = Vec::with_capacity(stack.len() + 1);
    let mask = vocab
        .tokens()
        .iter()
        .map(|tok| {
            scratch.clear();
            scratch.extend_from_slice(&stack);
            if apply_kind(&mut scratch, tok).is_err() || remaining == 0 {
                return false;
            }
            if *tok == Token::Sep {
                return true;
            }
            min_completion(&scratch).is_some_and(|c| c < remaining)
        })
        .collect();
    Ok(mask)
}

/// Full stack with expression trees, used for parsing.
#[derive(Debug, Clone, Default)]
pub struct BuilderStack {
    items: Vec<Slot>,
    kinds: Vec<SlotKind>,
}

impl BuilderStack {
    pub fn items(&self) -> &[Slot] {
        &self.items
    }

    pub fn kinds(&self) -> &[SlotKind] {
        &self.kinds
    }

    /// Applies one body token (neither begin nor separator).
    pub fn push(&mut self, token: &Token) -> Result<(), &'static str> {
        apply_kind(&mut self.kinds, token)?;
        match *token {
            Token::Feature(f) => self.items.push(Slot::Expr(Expr::Feature(f))),
            Token::Constant(c) => self.items.push(Slot::Constant(c)),
            Token::Delta(d) => self.items.push(Slot::Delta(d)),
            Token::Op(op) => {
                let window = if op.is_time_series() {
                    match self.items.pop() {
                        Some(Slot::Delta(d)) => Some(d),
                        _ => unreachable!("checked by apply_kind"),
                    }
                } else {
                    None
                };
                let arity = op.operand_arity();
                let operands: Vec<Expr> = self
                    .items
                    .drain(self.items.len() - arity..)
                    .map(|slot| match slot {
                        Slot::Expr(e) => e,
                        Slot::Constant(c) => Expr::Constant(c),
                        Slot::Delta(_) => unreachable!("checked by apply_kind"),
                    })
                    .collect();
                self.items.push(Slot::Expr(Expr::from_operands(op, operands, window)));
            }
            Token::Begin | Token::Sep => unreachable!("rejected by apply_kind or handled by caller"),
        }
        Ok(())
    }

    /// Reconstructs the stack for a `BEG ...` prefix.
    pub fn from_prefix(prefix: &[Token]) -> Result<Self, DslError> {
        if prefix.first() != Some(&Token::Begin) {
            return Err(DslError::rpn(0, prefix.first(), "sequence must start with BEG"));
        }
        let mut stack = BuilderStack::default();
        for (i, tok) in prefix.iter().enumerate().skip(1) {
            if *tok == Token::Sep {
                return Err(DslError::rpn(i, Some(tok), "separator inside a prefix"));
            }
            stack.push(tok).map_err(|m| DslError::rpn(i, Some(tok), m))?;
        }
        Ok(stack)
    }
}

/// Parses a complete `BEG ... SEP` sequence under the given cap.
pub(crate) fn parse_with_cap(tokens: &[Token], cap: usize) -> Result<Expr, DslError> {
    if tokens.len() > cap {
        return Err(DslError::rpn(cap, tokens.get(cap), "sequence exceeds the length cap"));
    }
    if tokens.len() < 2 || tokens.last() != Some(&Token::Sep) {
        return Err(DslError::rpn(
            tokens.len().saturating_sub(1),
            tokens.last(),
            "sequence must end with SEP",
        ));
    }
    let body = &tokens[..tokens.len() - 1];
    let stack = BuilderStack::from_prefix(body)?;
    let sep = tokens.len() - 1;
    match stack.items() {
        [Slot::Expr(e)] => Ok(e.clone()),
        [Slot::Constant(_)] => Err(DslError::rpn(sep, Some(&Token::Sep), "expression is a constant")),
        [] => Err(DslError::rpn(sep, Some(&Token::Sep), "empty expression")),
        _ => Err(DslError::rpn(
            sep,
            Some(&Token::Sep),
            "unconsumed items left on the stack",
        )),
    }
}
