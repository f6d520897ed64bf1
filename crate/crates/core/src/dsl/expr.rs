use std::fmt;
use std::str::FromStr;

use super::builder::parse_with_cap;
use super::token::{Operator, Token, MAX_TOKENS};
use super::DslError;
use crate::panel::Feature;

/// Expression tree. Constants only ever appear as operands of cross-section
/// binary operators; windows are carried by the time-series nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Feature(Feature),
    Constant(f64),
    Unary {
        op: Operator,
        operand: Box<Expr>,
    },
    Binary {
        op: Operator,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Rolling {
        op: Operator,
        operand: Box<Expr>,
        window: usize,
    },
    PairRolling {
        op: Operator,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        window: usize,
    },
}

impl Expr {
    pub(crate) fn from_operands(op: Operator, mut operands: Vec<Expr>, window: Option<usize>) -> Expr {
        match (operands.len(), window) {
            (1, None) => Expr::Unary {
                op,
                operand: Box::new(operands.remove(0)),
            },
            (2, None) => {
                let rhs = operands.pop().unwrap();
                let lhs = operands.pop().unwrap();
                Expr::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                }
            }
            (1, Some(window)) => Expr::Rolling {
                op,
                operand: Box::new(operands.remove(0)),
                window,
            },
            (2, Some(window)) => {
                let rhs = operands.pop().unwrap();
                let lhs = operands.pop().unwrap();
                Expr::PairRolling {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                    window,
                }
            }
            _ => unreachable!("operators take one or two operands"),
        }
    }

    /// True iff the subtree references no feature.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Feature(_) => false,
            Expr::Constant(_) => true,
            Expr::Unary { operand, .. } | Expr::Rolling { operand, .. } => operand.is_constant(),
            Expr::Binary { lhs, rhs, .. } | Expr::PairRolling { lhs, rhs, .. } => {
                lhs.is_constant() && rhs.is_constant()
            }
        }
    }

    /// Postorder token encoding (no begin/separator markers).
    pub fn to_rpn(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.write_rpn(&mut out);
        out
    }

    fn write_rpn(&self, out: &mut Vec<Token>) {
        match self {
            Expr::Feature(f) => out.push(Token::Feature(*f)),
            Expr::Constant(c) => out.push(Token::Constant(*c)),
            Expr::Unary { op, operand } => {
                operand.write_rpn(out);
                out.push(Token::Op(*op));
            }
            Expr::Binary { op, lhs, rhs } => {
                lhs.write_rpn(out);
                rhs.write_rpn(out);
                out.push(Token::Op(*op));
            }
            Expr::Rolling { op, operand, window } => {
                operand.write_rpn(out);
                out.push(Token::Delta(*window));
                out.push(Token::Op(*op));
            }
            Expr::PairRolling { op, lhs, rhs, window } => {
                lhs.write_rpn(out);
                rhs.write_rpn(out);
                out.push(Token::Delta(*window));
                out.push(Token::Op(*op));
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Feature(feat) => write!(f, "${feat}"),
            Expr::Constant(c) => write!(f, "{c}"),
            Expr::Unary { op, operand } => write!(f, "{op}({operand})"),
            Expr::Binary { op, lhs, rhs } => write!(f, "{op}({lhs},{rhs})"),
            Expr::Rolling { op, operand, window } => write!(f, "{op}({operand},{window})"),
            Expr::PairRolling { op, lhs, rhs, window } => write!(f, "{op}({lhs},{rhs},{window})"),
        }
    }
}

/// Returns true iff `expr` contains no feature token.
pub fn is_constant_expr(expr: &Expr) -> bool {
    expr.is_constant()
}

/// A formally legal formula: its RPN body and the tree it encodes.
/// Two expressions are equal iff their token sequences are.
#[derive(Debug, Clone)]
pub struct Expression {
    rpn: Vec<Token>,
    root: Expr,
}

impl PartialEq for Expression {
    fn eq(&self, other: &Self) -> bool {
        self.rpn == other.rpn
    }
}

impl Expression {
    pub fn rpn(&self) -> &[Token] {
        &self.rpn
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    /// Sequence including the begin and separator markers.
    pub fn full_sequence(&self) -> Vec<Token> {
        let mut seq = Vec::with_capacity(self.rpn.len() + 2);
        seq.push(Token::Begin);
        seq.extend_from_slice(&self.rpn);
        seq.push(Token::Sep);
        seq
    }

    /// Validates a tree by round-tripping it through the RPN parser.
    pub fn from_tree(root: Expr) -> Result<Self, DslError> {
        let mut seq = vec![Token::Begin];
        seq.extend(root.to_rpn());
        seq.push(Token::Sep);
        parse_rpn(&seq)
    }

    /// Canonical infix text, e.g. `Max($close,20)`.
    pub fn to_infix_string(&self) -> String {
        self.root.to_string()
    }

    /// Reads the canonical infix text back.
    pub fn parse_infix(text: &str) -> Result<Self, DslError> {
        let mut reader = InfixReader { text, pos: 0 };
        reader.skip_ws();
        let root = reader.expr()?;
        reader.skip_ws();
        if reader.pos != text.len() {
            return Err(reader.error("trailing input"));
        }
        Expression::from_tree(root)
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

impl FromStr for Expression {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expression::parse_infix(s)
    }
}

/// Parses a complete `BEG ... SEP` token sequence.
pub fn parse_rpn(tokens: &[Token]) -> Result<Expression, DslError> {
    parse_rpn_with_cap(tokens, MAX_TOKENS)
}

pub fn parse_rpn_with_cap(tokens: &[Token], cap: usize) -> Result<Expression, DslError> {
    let root = parse_with_cap(tokens, cap)?;
    Ok(Expression {
        rpn: tokens[1..tokens.len() - 1].to_vec(),
        root,
    })
}

struct InfixReader<'a> {
    text: &'a str,
    pos: usize,
}

enum Arg {
    Expr(Expr),
    Number(f64, &'static str),
}

impl InfixReader<'_> {
    fn error(&self, message: &str) -> DslError {
        DslError::Infix {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn rest(&self) -> &str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &str {
        let start = self.pos;
        let len: usize = self.rest().chars().take_while(|&c| pred(c)).map(char::len_utf8).sum();
        self.pos += len;
        &self.text[start..self.pos]
    }

    fn arg(&mut self) -> Result<Arg, DslError> {
        self.skip_ws();
        let c = self.rest().chars().next().ok_or_else(|| self.error("unexpected end"))?;
        if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' {
            let start = self.pos;
            let text = self
                .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+'))
                .to_string();
            let value: f64 = text.parse().map_err(|_| DslError::Infix {
                position: start,
                message: format!("bad number `{text}`"),
            })?;
            Ok(Arg::Number(
                value,
                if text.contains(['.', 'e', 'E']) { "real" } else { "int" },
            ))
        } else {
            self.expr().map(Arg::Expr)
        }
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        self.skip_ws();
        let start = self.pos;
        if self.eat('$') {
            let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_').to_string();
            return name.parse::<Feature>().map(Expr::Feature).map_err(|m| DslError::Infix {
                position: start,
                message: m,
            });
        }
        let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_').to_string();
        if name.is_empty() {
            return Err(self.error("expected `$feature` or `Operator(`"));
        }
        let op: Operator = name.parse().map_err(|m| DslError::Infix {
            position: start,
            message: m,
        })?;
        if !self.eat('(') {
            return Err(self.error("expected `(`"));
        }
        let mut args = vec![self.arg()?];
        while self.eat(',') {
            args.push(self.arg()?);
        }
        if !self.eat(')') {
            return Err(self.error("expected `)` or `,`"));
        }

        let arity = op.operand_arity();
        let window = if op.is_time_series() {
            if args.len() != arity + 1 {
                return Err(DslError::Infix {
                    position: start,
                    message: format!("{op} takes {arity} operand(s) and a window"),
                });
            }
            match args.pop() {
                Some(Arg::Number(w, "int")) if w >= 1.0 && w.fract() == 0.0 => Some(w as usize),
                _ => {
                    return Err(DslError::Infix {
                        position: start,
                        message: format!("{op} needs a positive integer window last"),
                    })
                }
            }
        } else {
            if args.len() != arity {
                return Err(DslError::Infix {
                    position: start,
                    message: format!("{op} takes {arity} operand(s)"),
                });
            }
            None
        };
        let operands = args
            .into_iter()
            .map(|a| match a {
                Arg::Expr(e) => e,
                Arg::Number(c, _) => Expr::Constant(c),
            })
            .collect();
        Ok(Expr::from_operands(op, operands, window))
    }
}
