//! Evaluation of formulas over a panel.
//!
//! Intermediate series are stock-major so that time-series operators scan a
//! contiguous history; the resulting [`AlphaMatrix`] is day-major so that
//! metrics scan a contiguous cross-section. Any non-finite value becomes a
//! missing cell, and missing operands propagate.

use std::io::Write;

use crate::dsl::{Expr, Expression, Operator};
use crate::metrics;
use crate::panel::{DayRange, PanelData, PanelError};

/// Minimum share of defined cells for a formula to count as evaluable.
pub const DEFAULT_MIN_VALID_FRACTION: f64 = 0.8;

/// Alpha values over a day range, `values[(day - range.start) * n + stock]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatrix {
    range: DayRange,
    n_stocks: usize,
    values: Vec<f64>,
}

impl AlphaMatrix {
    pub fn new(range: DayRange, n_stocks: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), range.len() * n_stocks, "alpha matrix shape");
        Self {
            range,
            n_stocks,
            values,
        }
    }

    pub fn range(&self) -> DayRange {
        self.range
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    pub fn n_days(&self) -> usize {
        self.range.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cross-section for the `i`-th day of the range.
    pub fn day(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_stocks..(i + 1) * self.n_stocks]
    }

    pub fn days(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_stocks)
    }

    pub fn valid_fraction(&self) -> f64 {
        let valid = self.values.iter().filter(|v| !v.is_nan()).count();
        valid as f64 / self.values.len() as f64
    }

    /// Days with at least one defined cell.
    pub fn valid_day_count(&self) -> usize {
        self.days().filter(|d| d.iter().any(|v| !v.is_nan())).count()
    }

    /// Per-day mean-zero, unit-length version; degenerate days become fully
    /// missing.
    pub fn normalized(&self) -> AlphaMatrix {
        let mut out = vec![f64::NAN; self.values.len()];
        for (src, dst) in self.days().zip(out.chunks_exact_mut(self.n_stocks)) {
            if metrics::normalize_into(src, dst).is_err() {
                dst.fill(f64::NAN);
            }
        }
        AlphaMatrix::new(self.range, self.n_stocks, out)
    }

    /// Debug dump as `date,symbol,value`.
    pub fn write_csv<W: Write>(&self, panel: &PanelData, mut out: W) -> Result<(), PanelError> {
        writeln!(out, "date,symbol,value")?;
        for (i, day) in self.days().enumerate() {
            let date = panel.dates()[self.range.start + i].format("%Y-%m-%d");
            for (symbol, v) in panel.symbols().iter().zip(day) {
                if v.is_nan() {
                    writeln!(out, "{date},{symbol},")?;
                } else {
                    writeln!(out, "{date},{symbol},{v}")?;
                }
            }
        }
        Ok(())
    }
}

/// Evaluates `expr` on `range`, reading as much history before the range as
/// the formula needs and nothing after it.
pub fn evaluate(expr: &Expression, panel: &PanelData, range: DayRange) -> AlphaMatrix {
    assert!(range.end < panel.n_days(), "day range outside the panel");
    let len = range.end + 1;
    let n = panel.n_stocks();
    let series = eval_node(expr.root(), panel, len);
    let mut values = Vec::with_capacity(range.len() * n);
    for day in range.iter() {
        values.extend((0..n).map(|stock| series[stock * len + day]));
    }
    AlphaMatrix::new(range, n, values)
}

/// Enough defined cells and no cross-sectionally constant day.
pub fn semantic_validity(matrix: &AlphaMatrix, min_valid_fraction: f64) -> bool {
    if matrix.valid_fraction() < min_valid_fraction {
        return false;
    }
    matrix
        .days()
        .filter(|d| d.iter().any(|v| !v.is_nan()))
        .all(|d| !metrics::is_degenerate(d))
}

fn finite_or_nan(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

/// Stock-major series covering days `0..len`.
fn eval_node(expr: &Expr, panel: &PanelData, len: usize) -> Vec<f64> {
    let n = panel.n_stocks();
    match expr {
        Expr::Feature(f) => {
            let mut out = Vec::with_capacity(n * len);
            for stock in 0..n {
                out.extend_from_slice(&panel.series(*f, stock)[..len]);
            }
            out
        }
        Expr::Constant(c) => vec![*c; n * len],
        Expr::Unary { op, operand } => {
            let mut x = eval_node(operand, panel, len);
            let f: fn(f64) -> f64 = match op {
                Operator::Abs => f64::abs,
                Operator::Log => |v| if v > 0.0 { v.ln() } else { f64::NAN },
                _ => unreachable!("{op} is not a cross-section unary operator"),
            };
            x.iter_mut().for_each(|v| *v = finite_or_nan(f(*v)));
            x
        }
        Expr::Binary { op, lhs, rhs } => {
            let mut a = eval_node(lhs, panel, len);
            let b = eval_node(rhs, panel, len);
            let f: fn(f64, f64) -> f64 = match op {
                Operator::Add => |x, y| x + y,
                Operator::Sub => |x, y| x - y,
                Operator::Mul => |x, y| x * y,
                Operator::Div => |x, y| x / y,
                Operator::Greater => |x, y| if x.is_nan() || y.is_nan() { f64::NAN } else { x.max(y) },
                Operator::Less => |x, y| if x.is_nan() || y.is_nan() { f64::NAN } else { x.min(y) },
                _ => unreachable!("{op} is not a cross-section binary operator"),
            };
            a.iter_mut().zip(&b).for_each(|(x, &y)| *x = finite_or_nan(f(*x, y)));
            a
        }
        Expr::Rolling { op, operand, window } => {
            let x = eval_node(operand, panel, len);
            let mut out = vec![f64::NAN; n * len];
            for stock in 0..n {
                let col = &x[stock * len..(stock + 1) * len];
                let dst = &mut out[stock * len..(stock + 1) * len];
                rolling(*op, col, *window, dst);
            }
            out
        }
        Expr::PairRolling { op, lhs, rhs, window } => {
            let a = eval_node(lhs, panel, len);
            let b = eval_node(rhs, panel, len);
            let mut out = vec![f64::NAN; n * len];
            for stock in 0..n {
                let span = stock * len..(stock + 1) * len;
                pair_rolling(*op, &a[span.clone()], &b[span.clone()], *window, &mut out[span]);
            }
            out
        }
    }
}

fn rolling(op: Operator, col: &[f64], w: usize, dst: &mut [f64]) {
    match op {
        Operator::Ref => {
            if w < col.len() {
                dst[w..].copy_from_slice(&col[..col.len() - w]);
            }
            return;
        }
        Operator::Delta => {
            for d in w..col.len() {
                dst[d] = finite_or_nan(col[d] - col[d - w]);
            }
            return;
        }
        _ => {}
    }
    if w == 0 {
        return;
    }
    let stat: fn(&[f64]) -> f64 = match op {
        Operator::Mean => window::mean,
        Operator::Sum => |x| x.iter().sum(),
        Operator::Med => window::median,
        Operator::Std => |x| window::var(x).sqrt(),
        Operator::Var => window::var,
        Operator::Max => |x| x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Operator::Min => |x| x.iter().copied().fold(f64::INFINITY, f64::min),
        Operator::Mad => window::mad,
        Operator::Wma => window::wma,
        Operator::Ema => window::ema,
        _ => unreachable!("{op} is not a time-series unary operator"),
    };
    for d in (w - 1)..col.len() {
        let win = &col[d + 1 - w..=d];
        if win.iter().all(|v| !v.is_nan()) {
            dst[d] = finite_or_nan(stat(win));
        }
    }
}

fn pair_rolling(op: Operator, a: &[f64], b: &[f64], w: usize, dst: &mut [f64]) {
    if w == 0 {
        return;
    }
    let stat: fn(&[f64], &[f64]) -> f64 = match op {
        Operator::Cov => window::cov,
        Operator::Corr => window::corr,
        _ => unreachable!("{op} is not a time-series binary operator"),
    };
    for d in (w - 1)..a.len() {
        let (wa, wb) = (&a[d + 1 - w..=d], &b[d + 1 - w..=d]);
        if wa.iter().chain(wb).all(|v| !v.is_nan()) {
            dst[d] = finite_or_nan(stat(wa, wb));
        }
    }
}

/// Window statistics. Variance and covariance use the sample (n - 1)
/// denominator; mean absolute deviation uses n.
pub(crate) mod window {
    pub fn mean(x: &[f64]) -> f64 {
        x.iter().sum::<f64>() / x.len() as f64
    }

    pub fn var(x: &[f64]) -> f64 {
        let m = mean(x);
        x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
    }

    pub fn mad(x: &[f64]) -> f64 {
        let m = mean(x);
        x.iter().map(|v| (v - m).abs()).sum::<f64>() / x.len() as f64
    }

    pub fn median(x: &[f64]) -> f64 {
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        }
    }

    /// Weights 1..=t, newest heaviest.
    pub fn wma(x: &[f64]) -> f64 {
        let t = x.len() as f64;
        let weighted: f64 = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
        weighted / (t * (t + 1.0) / 2.0)
    }

    /// Smoothing 2 / (t + 1), seeded with the oldest value of the window.
    pub fn ema(x: &[f64]) -> f64 {
        let alpha = 2.0 / (x.len() as f64 + 1.0);
        x[1..].iter().fold(x[0], |acc, v| alpha * v + (1.0 - alpha) * acc)
    }

    pub fn cov(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        s / (a.len() as f64 - 1.0)
    }

    /// Missing when either side has no variation.
    pub fn corr(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            let (dx, dy) = (x - ma, y - mb);
            saa += dx * dx;
            sbb += dy * dy;
            sab += dx * dy;
        }
        let flat = |ss: f64, m: f64, n: usize| ss <= 1e-24 * (m * m).max(f64::MIN_POSITIVE) * n as f64;
        if flat(saa, ma, a.len()) || flat(sbb, mb, b.len()) {
            return f64::NAN;
        }
        sab / (saa.sqrt() * sbb.sqrt())
    }
}
