//! Random-search baseline: sample formulas uniformly over the legality mask
//! and keep the best single alpha by training IC.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{parse_rpn_with_cap, valid_next_tokens_with_cap, Expression, Token, Vocabulary};
use crate::eval::{evaluate, semantic_validity};
use crate::metrics::{mean_ic, paired_days};
use crate::panel::{DayRange, PanelData};

/// Draws one complete token sequence (BEG .. SEP), uniform over the mask at
/// every step.
pub fn sample_formula<R: Rng + ?Sized>(vocab: &Vocabulary, cap: usize, rng: &mut R) -> Vec<Token> {
    let mut tokens = vec![Token::Begin];
    while tokens.last() != Some(&Token::Sep) {
        let mask = valid_next_tokens_with_cap(&tokens, vocab, cap).expect("prefix is reachable");
        let allowed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        assert!(!allowed.is_empty(), "masking left no completion");
        tokens.push(vocab.token(allowed[rng.random_range(0..allowed.len())]));
    }
    tokens
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    /// Best formula as canonical text, if any sample was valid.
    pub best: Option<String>,
    /// Training mean IC of the best formula after orienting it (so >= 0).
    pub train_ic: f64,
    /// +1 or -1: the orientation applied to the raw formula.
    pub sign: f64,
    pub sampled: usize,
    pub valid: usize,
}

impl SearchResult {
    pub fn expression(&self) -> Option<Expression> {
        self.best
            .as_deref()
            .map(|s| Expression::parse_infix(s).expect("stored canonical text"))
    }

    /// Mean IC of the oriented best formula on another range.
    pub fn ic_on(&self, panel: &PanelData, range: DayRange) -> Option<f64> {
        let expr = self.expression()?;
        let m = evaluate(&expr, panel, range);
        let n = panel.n_stocks();
        let target = &panel.target()[range.start * n..(range.end + 1) * n];
        mean_ic(paired_days(m.values(), target, n))
            .ok()
            .map(|ic| self.sign * ic)
    }
}

/// Samples `budget` formulas and returns the one with the largest |train IC|.
pub fn random_search<R: Rng + ?Sized>(
    panel: &PanelData,
    range: DayRange,
    vocab: &Vocabulary,
    cap: usize,
    budget: usize,
    min_valid_fraction: f64,
    rng: &mut R,
) -> SearchResult {
    let n = panel.n_stocks();
    let target = &panel.target()[range.start * n..(range.end + 1) * n];
    let mut best: Option<(Expression, f64)> = None;
    let mut valid = 0;
    for _ in 0..budget {
        let tokens = sample_formula(vocab, cap, rng);
        let expr = parse_rpn_with_cap(&tokens, cap).expect("masked samples parse");
        let m = evaluate(&expr, panel, range);
        if !semantic_validity(&m, min_valid_fraction) {
            continue;
        }
        let Ok(ic) = mean_ic(paired_days(m.values(), target, n)) else {
            continue;
        };
        valid += 1;
        if best.as_ref().is_none_or(|(_, b)| ic.abs() > b.abs()) {
            best = Some((expr, ic));
        }
    }
    match best {
        Some((expr, ic)) => SearchResult {
            best: Some(expr.to_infix_string()),
            train_ic: ic.abs(),
            sign: if ic < 0.0 { -1.0 } else { 1.0 },
            sampled: budget,
            valid,
        },
        None => SearchResult {
            best: None,
            train_ic: 0.0,
            sign: 1.0,
            sampled: budget,
            valid,
        },
    }
}
