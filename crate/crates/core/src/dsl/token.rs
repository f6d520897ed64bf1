use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::panel::Feature;

/// Constants the generator may emit.
pub const CONSTANTS: [f64; 14] = [
    -30.0, -10.0, -5.0, -2.0, -1.0, -0.5, -0.01, 0.01, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0,
];

/// Time-delta (window) lengths, in trading days, the generator may emit.
pub const TIME_DELTAS: [usize; 5] = [10, 20, 30, 40, 50];

/// Maximum sequence length, counting the begin and separator markers.
pub const MAX_TOKENS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpCategory {
    CrossSection,
    TimeSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OperatorSpec {
    pub name: &'static str,
    pub category: OpCategory,
    /// Expression operands, not counting a time-series operator's window.
    pub operand_arity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Abs,
    Log,
    Add,
    Sub,
    Mul,
    Div,
    Greater,
    Less,
    Ref,
    Mean,
    Med,
    Sum,
    Std,
    Var,
    Max,
    Min,
    Mad,
    Delta,
    Wma,
    Ema,
    Cov,
    Corr,
}

impl Operator {
    pub const ALL: [Operator; 22] = [
        Operator::Abs,
        Operator::Log,
        Operator::Add,
        Operator::Sub,
        Operator::Mul,
        Operator::Div,
        Operator::Greater,
        Operator::Less,
        Operator::Ref,
        Operator::Mean,
        Operator::Med,
        Operator::Sum,
        Operator::Std,
        Operator::Var,
        Operator::Max,
        Operator::Min,
        Operator::Mad,
        Operator::Delta,
        Operator::Wma,
        Operator::Ema,
        Operator::Cov,
        Operator::Corr,
    ];

    pub fn spec(self) -> OperatorSpec {
        use OpCategory::*;
        use Operator::*;
        let (category, operand_arity) = match self {
            Abs | Log => (CrossSection, 1),
            Add | Sub | Mul | Div | Greater | Less => (CrossSection, 2),
            Ref | Mean | Med | Sum | Std | Var | Max | Min | Mad | Delta | Wma | Ema => (TimeSeries, 1),
            Cov | Corr => (TimeSeries, 2),
        };
        OperatorSpec {
            name: self.name(),
            category,
            operand_arity,
        }
    }

    pub fn name(self) -> &'static str {
        use Operator::*;
        match self {
            Abs => "Abs",
            Log => "Log",
            Add => "Add",
            Sub => "Sub",
            Mul => "Mul",
            Div => "Div",
            Greater => "Greater",
            Less => "Less",
            Ref => "Ref",
            Mean => "Mean",
            Med => "Med",
            Sum => "Sum",
            Std => "Std",
            Var => "Var",
            Max => "Max",
            Min => "Min",
            Mad => "Mad",
            Delta => "Delta",
            Wma => "WMA",
            Ema => "EMA",
            Cov => "Cov",
            Corr => "Corr",
        }
    }

    pub fn is_time_series(self) -> bool {
        self.spec().category == OpCategory::TimeSeries
    }

    pub fn operand_arity(self) -> usize {
        self.spec().operand_arity
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Operator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Operator::ALL
            .iter()
            .copied()
            .find(|op| op.name() == s)
            .ok_or_else(|| format!("unknown operator `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Begin,
    Sep,
    Op(Operator),
    Feature(Feature),
    Constant(f64),
    Delta(usize),
}

impl Token {
    pub fn kind(&self) -> &'static str {
        match self {
            Token::Begin => "begin",
            Token::Sep => "sep",
            Token::Op(_) => "operator",
            Token::Feature(_) => "feature",
            Token::Constant(_) => "constant",
            Token::Delta(_) => "time-delta",
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Begin => f.write_str("BEG"),
            Token::Sep => f.write_str("SEP"),
            Token::Op(op) => write!(f, "{op}"),
            Token::Feature(feat) => write!(f, "${feat}"),
            Token::Constant(c) => write!(f, "{c}"),
            Token::Delta(d) => write!(f, "{d}d"),
        }
    }
}

/// The action space: every token the generator may append, with stable ids.
/// The begin marker is not an action but gets the id after the last action
/// so sequence encoders can embed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut tokens: Vec<Token> = Operator::ALL.iter().map(|&op| Token::Op(op)).collect();
        tokens.extend(Feature::ALL.iter().map(|&f| Token::Feature(f)));
        tokens.extend(CONSTANTS.iter().map(|&c| Token::Constant(c)));
        tokens.extend(TIME_DELTAS.iter().map(|&d| Token::Delta(d)));
        tokens.push(Token::Sep);
        Self { tokens }
    }
}

#[derive(Serialize)]
struct VocabEntry {
    id: usize,
    kind: &'static str,
    payload: serde_json::Value,
    text: String,
}

impl Vocabulary {
    /// A restricted vocabulary; must not contain the begin marker.
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        assert!(!tokens.contains(&Token::Begin), "begin marker is not an action");
        Self { tokens }
    }

    /// Number of actions.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, id: usize) -> Token {
        self.tokens[id]
    }

    /// Id used for the begin marker when embedding sequences.
    pub fn begin_id(&self) -> usize {
        self.tokens.len()
    }

    pub fn id_of(&self, token: &Token) -> Option<usize> {
        if *token == Token::Begin {
            return Some(self.begin_id());
        }
        self.tokens.iter().position(|t| t == token)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<VocabEntry> = self
            .tokens
            .iter()
            .chain(std::iter::once(&Token::Begin))
            .enumerate()
            .map(|(id, tok)| {
                let payload = match tok {
                    Token::Op(op) => serde_json::to_value(op.spec()).expect("serializable"),
                    Token::Feature(f) => serde_json::json!(f.name()),
                    Token::Constant(c) => serde_json::json!(c),
                    Token::Delta(d) => serde_json::json!(d),
                    Token::Begin | Token::Sep => serde_json::Value::Null,
                };
                VocabEntry {
                    id,
                    kind: tok.kind(),
                    payload,
                    text: tok.to_string(),
                }
            })
            .collect();
        serde_json::json!({ "max_tokens": MAX_TOKENS, "tokens": entries })
    }
}
