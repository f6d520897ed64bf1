//! Token vocabulary, formula trees, RPN parsing, and the masking rules that
//! keep generated sequences formally legal.

mod builder;
mod expr;
mod token;

pub use builder::{min_completion, valid_next_tokens, valid_next_tokens_with_cap, BuilderStack, Slot, SlotKind};
pub use expr::{is_constant_expr, parse_rpn, parse_rpn_with_cap, Expr, Expression};
pub use token::{OpCategory, Operator, OperatorSpec, Token, Vocabulary, CONSTANTS, MAX_TOKENS, TIME_DELTAS};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("token {index} ({token}): {message}")]
    Rpn {
        index: usize,
        token: String,
        message: String,
    },
    #[error("at offset {position}: {message}")]
    Infix { position: usize, message: String },
}

impl DslError {
    pub(crate) fn rpn(index: usize, token: Option<&Token>, message: &str) -> Self {
        DslError::Rpn {
            index,
            token: token.map_or_else(|| "<end>".to_string(), |t| format!("`{t}`")),
            message: message.to_string(),
        }
    }
}
