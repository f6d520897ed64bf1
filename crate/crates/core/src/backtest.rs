//! Daily top-k/drop-n trading simulation.
//!
//! Each day the stocks are ranked by signal; up to `n` held names that fell
//! out of the top `k` are sold (worst first) and up to `n` unheld top names
//! are bought (best first), each sized at `worth / k` while cash lasts.
//! Trades fill at the close. Net worth is reported before the day's trades,
//! so the first entry is the initial worth and the last is the final worth.

use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::AlphaMatrix;
use crate::panel::PanelData;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("invalid backtest config: {0}")]
    Config(String),
    #[error("signal covers days {start}..={end} but the panel has {days} days and {stocks} stocks")]
    Shape {
        start: usize,
        end: usize,
        days: usize,
        stocks: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub k: usize,
    pub n: usize,
    /// Per-side cost in basis points of traded notional.
    pub cost_bps: f64,
    pub initial_worth: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            k: 50,
            n: 5,
            cost_bps: 0.0,
            initial_worth: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTrades {
    pub buys: Vec<String>,
    pub sells: Vec<String>,
    /// The signal was missing for every stock; positions were held.
    pub missing_signal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub dates: Vec<NaiveDate>,
    /// Mark-to-market worth at each close, before that day's trades.
    pub net_worth: Vec<f64>,
    /// Traded notional over pre-trade worth.
    pub daily_turnover: Vec<f64>,
    pub final_worth: f64,
    pub trades: Vec<DayTrades>,
    /// Post-trade cash at each close.
    pub cash: Vec<f64>,
    /// Post-trade value of holdings at each close.
    pub holdings_value: Vec<f64>,
    pub costs: Vec<f64>,
    pub holdings_count: Vec<usize>,
}

pub fn run_topk_dropn(
    panel: &PanelData,
    signal: &AlphaMatrix,
    config: &BacktestConfig,
) -> Result<BacktestReport, BacktestError> {
    let stocks = panel.n_stocks();
    let range = signal.range();
    if signal.n_stocks() != stocks || range.end >= panel.n_days() {
        return Err(BacktestError::Shape {
            start: range.start,
            end: range.end,
            days: panel.n_days(),
            stocks,
        });
    }
    if config.n < 1 || config.n > config.k || config.k > stocks {
        return Err(BacktestError::Config(format!(
            "need 1 <= n <= k <= {stocks} stocks, got k={} n={}",
            config.k, config.n
        )));
    }
    if !(config.cost_bps >= 0.0 && config.initial_worth > 0.0 && config.initial_worth.is_finite()) {
        return Err(BacktestError::Config(
            "cost must be >= 0 and initial worth positive".into(),
        ));
    }
    let cost = config.cost_bps / 1e4;
    let symbols = panel.symbols();

    let mut shares = vec![0.0_f64; stocks];
    let mut held = vec![false; stocks];
    let mut last_price = vec![f64::NAN; stocks];
    let mut cash = config.initial_worth;
    let mut worth = config.initial_worth;

    let days = range.len();
    let mut report = BacktestReport {
        dates: panel.dates()[range.start..=range.end].to_vec(),
        net_worth: Vec::with_capacity(days),
        daily_turnover: Vec::with_capacity(days),
        final_worth: config.initial_worth,
        trades: Vec::with_capacity(days),
        cash: Vec::with_capacity(days),
        holdings_value: Vec::with_capacity(days),
        costs: Vec::with_capacity(days),
        holdings_count: Vec::with_capacity(days),
    };

    for (i, day) in range.iter().enumerate() {
        let price: Vec<f64> = (0..stocks).map(|s| panel.close(day, s)).collect();
        let tradable = |s: usize| price[s].is_finite() && price[s] > 0.0;
        // profit and loss since the previous close
        for s in 0..stocks {
            if held[s] && tradable(s) {
                worth += shares[s] * (price[s] - last_price[s]);
            }
            if tradable(s) {
                last_price[s] = price[s];
            }
        }
        report.net_worth.push(worth);

        let values = signal.day(i);
        let mut today = DayTrades {
            missing_signal: values.iter().all(|v| !v.is_finite()),
            ..DayTrades::default()
        };
        let mut traded = 0.0;
        let mut day_cost = 0.0;
        let last_day = i + 1 == days;
        if !today.missing_signal && !last_day {
            // descending signal, ties by symbol order; missing signals last
            let mut order: Vec<usize> = (0..stocks).collect();
            order.sort_by(|&a, &b| match (values[a].is_finite(), values[b].is_finite()) {
                (true, true) => values[b].total_cmp(&values[a]).then(a.cmp(&b)),
                (true, false) => std::cmp::Ordering::Less,
                (false, true) => std::cmp::Ordering::Greater,
                (false, false) => a.cmp(&b),
            });
            let target: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&s| values[s].is_finite() && tradable(s))
                .take(config.k)
                .collect();
            let in_target = |s: usize| target.contains(&s);

            let sells: Vec<usize> = order
                .iter()
                .rev()
                .copied()
                .filter(|&s| held[s] && !in_target(s) && tradable(s))
                .take(config.n)
                .collect();
            for &s in &sells {
                let proceeds = shares[s] * price[s];
                let fee = proceeds * cost;
                cash += proceeds - fee;
                worth -= fee;
                traded += proceeds;
                day_cost += fee;
                shares[s] = 0.0;
                held[s] = false;
                today.sells.push(symbols[s].clone());
            }

            let count = held.iter().filter(|&&h| h).count();
            let slots = config.k.saturating_sub(count).min(config.n);
            let buys: Vec<usize> = target.iter().copied().filter(|&s| !held[s]).take(slots).collect();
            let per_name = worth / config.k as f64;
            for (j, &s) in buys.iter().enumerate() {
                let amount = per_name.min(cash / (buys.len() - j) as f64).max(0.0);
                if amount <= 0.0 {
                    break;
                }
                let bought = amount / (1.0 + cost);
                let fee = amount - bought;
                shares[s] = bought / price[s];
                held[s] = true;
                cash -= amount;
                worth -= fee;
                traded += bought;
                day_cost += fee;
                today.buys.push(symbols[s].clone());
            }
        }
        let pre_trade = report.net_worth[i];
        report
            .daily_turnover
            .push(if pre_trade > 0.0 { traded / pre_trade } else { 0.0 });
        report.costs.push(day_cost);
        report.cash.push(cash);
        report.holdings_value.push(
            (0..stocks)
                .filter(|&s| held[s])
                .map(|s| shares[s] * last_price[s])
                .sum(),
        );
        report.holdings_count.push(held.iter().filter(|&&h| h).count());
        report.trades.push(today);
    }
    report.final_worth = *report.net_worth.last().expect("range is non-empty");
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub initial_worth: f64,
    pub final_worth: f64,
    pub total_return: f64,
    /// Compounded over a 252-day year.
    pub annualized_return: f64,
    pub max_drawdown: f64,
    pub mean_turnover: f64,
    pub days: usize,
}

pub fn summarize(report: &BacktestReport) -> BacktestSummary {
    let series = &report.net_worth;
    let first = series[0];
    let last = *series.last().expect("non-empty series");
    let total_return = last / first - 1.0;
    let periods = series.len() - 1;
    let annualized_return = if periods == 0 {
        0.0
    } else {
        (last / first).powf(252.0 / periods as f64) - 1.0
    };
    BacktestSummary {
        initial_worth: first,
        final_worth: last,
        total_return,
        annualized_return,
        max_drawdown: max_drawdown(series),
        mean_turnover: report.daily_turnover.iter().sum::<f64>() / report.daily_turnover.len() as f64,
        days: series.len(),
    }
}

/// Largest peak-to-trough decline as a fraction of the peak.
pub fn max_drawdown(series: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0_f64;
    for &v in series {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    worst
}

impl BacktestReport {
    /// `date,net_worth,turnover` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BacktestError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "net_worth", "turnover"])?;
        for ((d, nw), t) in self.dates.iter().zip(&self.net_worth).zip(&self.daily_turnover) {
            w.write_record([d.to_string(), nw.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
