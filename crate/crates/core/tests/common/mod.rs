//! Reference implementations used as oracles by the integration and
//! acceptance tests. Written from the operator definitions, day-major, with
//! plain loops; they share no code with the library's kernels.

#![allow(dead_code)]

use std::collections::HashSet;

use alphamine_core::dsl::{Expr, Operator, Token, Vocabulary};
use alphamine_core::panel::{Feature, PanelData};
use chrono::{Days, NaiveDate};
use rand::Rng;

/// Random panel with positive prices, occasional negative/zero "features"
/// via volume noise, and a sprinkle of missing cells.
pub fn random_panel<R: Rng>(rng: &mut R, n: usize, t: usize, missing: f64) -> PanelData {
    let dates = (0..t)
        .map(|d| NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + Days::new(d as u64))
        .collect();
    let features = std::array::from_fn(|f| {
        let mut v = Vec::with_capacity(n * t);
        for _ in 0..n * t {
            let x = if rng.random_bool(missing) {
                f64::NAN
            } else if f == Feature::Volume.index() {
                rng.random_range(-2.0..50.0)
            } else {
                rng.random_range(1.0..20.0)
            };
            v.push(x);
        }
        v
    });
    let symbols = (0..n).map(|i| format!("X{i}")).collect();
    PanelData::new(dates, symbols, features, vec![f64::NAN; n * t]).unwrap()
}

/// Day-major matrix `[day][stock]` over the whole panel.
pub type Grid = Vec<Vec<f64>>;

fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

pub fn naive_eval(expr: &Expr, panel: &PanelData) -> Grid {
    let (t, n) = (panel.n_days(), panel.n_stocks());
    match expr {
        Expr::Feature(f) => (0..t)
            .map(|d| (0..n).map(|s| panel.value(*f, d, s)).collect())
            .collect(),
        Expr::Constant(c) => vec![vec![*c; n]; t],
        Expr::Unary { op, operand } => {
            let x = naive_eval(operand, panel);
            x.iter()
                .map(|row| {
                    row.iter()
                        .map(|&v| match op {
                            Operator::Abs => clean(v.abs()),
                            Operator::Log => {
                                if v > 0.0 {
                                    clean(v.ln())
                                } else {
                                    f64::NAN
                                }
                            }
                            _ => panic!("not unary"),
                        })
                        .collect()
                })
                .collect()
        }
        Expr::Binary { op, lhs, rhs } => {
            let (a, b) = (naive_eval(lhs, panel), naive_eval(rhs, panel));
            let mut out = vec![vec![f64::NAN; n]; t];
            for d in 0..t {
                for s in 0..n {
                    let (x, y) = (a[d][s], b[d][s]);
                    if x.is_nan() || y.is_nan() {
                        continue;
                    }
                    out[d][s] = clean(match op {
                        Operator::Add => x + y,
                        Operator::Sub => x - y,
                        Operator::Mul => x * y,
                        Operator::Div => x / y,
                        Operator::Greater => {
                            if x > y {
                                x
                            } else {
                                y
                            }
                        }
                        Operator::Less => {
                            if x < y {
                                x
                            } else {
                                y
                            }
                        }
                        _ => panic!("not binary"),
                    });
                }
            }
            out
        }
        Expr::Rolling { op, operand, window } => {
            let x = naive_eval(operand, panel);
            let w = *window;
            let mut out = vec![vec![f64::NAN; n]; t];
            for d in 0..t {
                for s in 0..n {
                    out[d][s] = match op {
                        Operator::Ref => {
                            if d >= w {
                                x[d - w][s]
                            } else {
                                f64::NAN
                            }
                        }
                        Operator::Delta => {
                            if d >= w {
                                clean(x[d][s] - x[d - w][s])
                            } else {
                                f64::NAN
                            }
                        }
                        _ => {
                            if w == 0 || d + 1 < w {
                                continue;
                            }
                            let win: Vec<f64> = (d + 1 - w..=d).map(|k| x[k][s]).collect();
                            if win.iter().any(|v| v.is_nan()) {
                                continue;
                            }
                            clean(window_stat(*op, &win))
                        }
                    };
                }
            }
            out
        }
        Expr::PairRolling { op, lhs, rhs, window } => {
            let (a, b) = (naive_eval(lhs, panel), naive_eval(rhs, panel));
            let w = *window;
            let mut out = vec![vec![f64::NAN; n]; t];
            for d in 0..t {
                if w == 0 || d + 1 < w {
                    continue;
                }
                for s in 0..n {
                    let wa: Vec<f64> = (d + 1 - w..=d).map(|k| a[k][s]).collect();
                    let wb: Vec<f64> = (d + 1 - w..=d).map(|k| b[k][s]).collect();
                    if wa.iter().chain(&wb).any(|v| v.is_nan()) {
                        continue;
                    }
                    let cov = sample_cov(&wa, &wb);
                    out[d][s] = clean(match op {
                        Operator::Cov => cov,
                        Operator::Corr => {
                            let flat = |x: &[f64]| x.iter().all(|v| *v == x[0]);
                            let (sa, sb) = (sample_cov(&wa, &wa).sqrt(), sample_cov(&wb, &wb).sqrt());
                            if flat(&wa) || flat(&wb) {
                                f64::NAN
                            } else {
                                cov / (sa * sb)
                            }
                        }
                        _ => panic!("not pair rolling"),
                    });
                }
            }
            out
        }
    }
}

fn avg(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    s / x.len() as f64
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (avg(a), avg(b));
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - ma) * (b[i] - mb);
    }
    s / (a.len() - 1) as f64
}

fn window_stat(op: Operator, x: &[f64]) -> f64 {
    let len = x.len();
    match op {
        Operator::Mean => avg(x),
        Operator::Sum => x.iter().sum(),
        Operator::Var => sample_cov(x, x),
        Operator::Std => sample_cov(x, x).sqrt(),
        Operator::Max => {
            let mut m = x[0];
            for &v in x {
                if v > m {
                    m = v;
                }
            }
            m
        }
        Operator::Min => {
            let mut m = x[0];
            for &v in x {
                if v < m {
                    m = v;
                }
            }
            m
        }
        Operator::Med => {
            let mut s = x.to_vec();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if len % 2 == 1 {
                s[len / 2]
            } else {
                0.5 * (s[len / 2 - 1] + s[len / 2])
            }
        }
        Operator::Mad => {
            let m = avg(x);
            x.iter().map(|v| (v - m).abs()).sum::<f64>() / len as f64
        }
        Operator::Wma => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (age, v) in x.iter().rev().enumerate() {
                let weight = (len - age) as f64;
                num += weight * v;
                den += weight;
            }
            num / den
        }
        Operator::Ema => {
            let alpha = 2.0 / (len as f64 + 1.0);
            let mut e = x[0];
            for v in &x[1..] {
                e = e + alpha * (v - e);
            }
            e
        }
        _ => panic!("not a window statistic"),
    }
}

/// Within `tol`, relative to max(1, |a|, |b|); both missing counts as equal.
pub fn close_or_both_nan(a: f64, b: f64, tol: f64) -> bool {
    if a.is_nan() || b.is_nan() {
        return a.is_nan() && b.is_nan();
    }
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Ty {
    Expr,
    Const,
    Delta,
}

/// Formal legality of a complete sequence `BEG ... SEP`, checked with typing
/// rules over a stack.
pub fn is_legal(seq: &[Token], cap: usize) -> bool {
    if seq.len() > cap || seq.len() < 3 || seq[0] != Token::Begin || *seq.last().unwrap() != Token::Sep {
        return false;
    }
    let mut st: Vec<Ty> = Vec::new();
    for tok in &seq[1..seq.len() - 1] {
        let ok = match tok {
            Token::Feature(_) => {
                st.push(Ty::Expr);
                true
            }
            Token::Constant(_) => {
                st.push(Ty::Const);
                true
            }
            Token::Delta(_) => {
                st.push(Ty::Delta);
                true
            }
            Token::Op(op) => {
                use Operator::*;
                match op {
                    Abs | Log => matches!(st.pop(), Some(Ty::Expr)),
                    Add | Sub | Mul | Div | Greater | Less => {
                        let (b, a) = (st.pop(), st.pop());
                        match (a, b) {
                            (Some(a), Some(b)) => {
                                a != Ty::Delta && b != Ty::Delta && !(a == Ty::Const && b == Ty::Const)
                            }
                            _ => false,
                        }
                    }
                    Cov | Corr => {
                        let (d, b, a) = (st.pop(), st.pop(), st.pop());
                        d == Some(Ty::Delta) && a == Some(Ty::Expr) && b == Some(Ty::Expr)
                    }
                    _ => {
                        let (d, a) = (st.pop(), st.pop());
                        d == Some(Ty::Delta) && a == Some(Ty::Expr)
                    }
                }
                .then(|| st.push(Ty::Expr))
                .is_some()
            }
            Token::Begin | Token::Sep => false,
        };
        if !ok {
            return false;
        }
    }
    st == [Ty::Expr]
}

/// Population-style normalization for the MSE oracle.
pub fn unit_center(x: &[f64]) -> Vec<f64> {
    let m = avg(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    c.iter().map(|v| v / norm).collect()
}

/// Mean over days of `||sum_i w_i N(f_i) - N(y)||^2 / n`.
pub fn direct_mse(alphas: &[Vec<Vec<f64>>], weights: &[f64], target: &[Vec<f64>]) -> f64 {
    let days = target.len();
    let n = target[0].len();
    let mut total = 0.0;
    for d in 0..days {
        let y = unit_center(&target[d]);
        let mut z = vec![0.0; n];
        for (a, w) in alphas.iter().zip(weights) {
            let f = unit_center(&a[d]);
            for s in 0..n {
                z[s] += w * f[s];
            }
        }
        total += z.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
    }
    total / days as f64
}

pub fn reduced_vocab() -> Vocabulary {
    Vocabulary::from_tokens(vec![
        Token::Op(Operator::Abs),
        Token::Op(Operator::Sub),
        Token::Op(Operator::Mean),
        Token::Op(Operator::Corr),
        Token::Feature(Feature::Close),
        Token::Feature(Feature::Volume),
        Token::Constant(0.5),
        Token::Delta(10),
        Token::Sep,
    ])
}

/// Every prefix of every legal sequence within the cap, by brute force.
pub fn completable_prefixes(vocab: &Vocabulary, cap: usize) -> HashSet<Vec<usize>> {
    fn walk(vocab: &Vocabulary, cap: usize, ids: &mut Vec<usize>, out: &mut HashSet<Vec<usize>>) {
        if ids.len() + 1 >= cap {
            return;
        }
        for id in 0..vocab.len() {
            ids.push(id);
            if vocab.token(id) == Token::Sep {
                let seq: Vec<Token> = std::iter::once(Token::Begin)
                    .chain(ids.iter().map(|&i| vocab.token(i)))
                    .collect();
                if is_legal(&seq, cap) {
                    for k in 0..=ids.len() {
                        out.insert(ids[..k].to_vec());
                    }
                }
            } else {
                walk(vocab, cap, ids, out);
            }
            ids.pop();
        }
    }
    let mut out = HashSet::new();
    walk(vocab, cap, &mut Vec::new(), &mut out);
    out
}
