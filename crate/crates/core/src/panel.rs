//! Stock panel data: raw daily features for a fixed universe plus the
//! forward-return target the alphas are scored against.
//!
//! Missing cells are stored as `NaN` throughout. Features are kept
//! stock-major (one contiguous time series per stock) because every
//! time-series operator walks a single stock's history; the target is kept
//! day-major because every metric walks a single day's cross-section.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("duplicate row for ({date}, {symbol})")]
    Duplicate { date: NaiveDate, symbol: String },
    #[error("non-positive close {value} for {symbol} on {date}")]
    NonPositiveClose {
        date: NaiveDate,
        symbol: String,
        value: f64,
    },
    #[error("invalid panel: {0}")]
    Invalid(String),
}

/// The six raw per-stock daily features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Open,
    Close,
    High,
    Low,
    Volume,
    Vwap,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::Open,
        Feature::Close,
        Feature::High,
        Feature::Low,
        Feature::Volume,
        Feature::Vwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Open => "open",
            Feature::Close => "close",
            Feature::High => "high",
            Feature::Low => "low",
            Feature::Volume => "volume",
            Feature::Vwap => "vwap",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

/// Forward-return target definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub horizon: usize,
}

impl Default for TargetSpec {
    fn default() -> Self {
        Self { horizon: 20 }
    }
}

/// Inclusive range of day indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: usize,
    pub end: usize,
}

impl DayRange {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "day range start {start} after end {end}");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, day: usize) -> bool {
        (self.start..=self.end).contains(&day)
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    dates: Vec<NaiveDate>,
    symbols: Vec<String>,
    /// `features[f][stock * n_days + day]`
    features: [Vec<f64>; 6],
    /// `target[day * n_stocks + stock]`
    target: Vec<f64>,
}

impl PanelData {
    /// Builds a panel from stock-major feature series and a day-major target.
    pub fn new(
        dates: Vec<NaiveDate>,
        symbols: Vec<String>,
        features: [Vec<f64>; 6],
        target: Vec<f64>,
    ) -> Result<Self, PanelError> {
        let cells = dates.len() * symbols.len();
        if dates.is_empty() || symbols.is_empty() {
            return Err(PanelError::Invalid("panel needs at least one day and one stock".into()));
        }
        if let Some(f) = features.iter().position(|s| s.len() != cells) {
            return Err(PanelError::Invalid(format!(
                "feature `{}` has {} cells, expected {cells}",
                Feature::ALL[f],
                features[f].len()
            )));
        }
        if target.len() != cells {
            return Err(PanelError::Invalid(format!(
                "target has {} cells, expected {cells}",
                target.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PanelError::Invalid("dates must be strictly increasing".into()));
        }
        Ok(Self {
            dates,
            symbols,
            features,
            target,
        })
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.symbols.len()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn full_range(&self) -> DayRange {
        DayRange::new(0, self.n_days() - 1)
    }

    /// Full history of one feature for one stock.
    pub fn series(&self, feature: Feature, stock: usize) -> &[f64] {
        let t = self.n_days();
        &self.features[feature.index()][stock * t..(stock + 1) * t]
    }

    pub fn value(&self, feature: Feature, day: usize, stock: usize) -> f64 {
        self.features[feature.index()][stock * self.n_days() + day]
    }

    pub fn close(&self, day: usize, stock: usize) -> f64 {
        self.value(Feature::Close, day, stock)
    }

    /// Cross-section of the target on `day`.
    pub fn target_day(&self, day: usize) -> &[f64] {
        let n = self.n_stocks();
        &self.target[day * n..(day + 1) * n]
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn with_target(mut self, target: Vec<f64>) -> Result<Self, PanelError> {
        if target.len() != self.target.len() {
            return Err(PanelError::Invalid("target shape mismatch".into()));
        }
        self.target = target;
        Ok(self)
    }

    /// Index of the first date `>= date`.
    pub fn day_index_at_or_after(&self, date: NaiveDate) -> Option<usize> {
        let idx = self.dates.partition_point(|d| *d < date);
        (idx < self.dates.len()).then_some(idx)
    }

    /// Index of the last date `<= date`.
    pub fn day_index_at_or_before(&self, date: NaiveDate) -> Option<usize> {
        self.dates.partition_point(|d| *d <= date).checked_sub(1)
    }

    /// Inclusive calendar interval mapped onto day indices.
    pub fn range_between(&self, from: NaiveDate, to: NaiveDate) -> Option<DayRange> {
        let start = self.day_index_at_or_after(from)?;
        let end = self.day_index_at_or_before(to)?;
        (start <= end).then(|| DayRange::new(start, end))
    }

    /// Keeps only days `0..=last_day`. Used to check that nothing downstream
    /// reads the future.
    pub fn truncated(&self, last_day: usize) -> PanelData {
        let t = self.n_days();
        let keep = last_day + 1;
        assert!(keep <= t);
        let n = self.n_stocks();
        let features = std::array::from_fn(|f| {
            let mut out = Vec::with_capacity(keep * n);
            for stock in 0..n {
                out.extend_from_slice(&self.features[f][stock * t..stock * t + keep]);
            }
            out
        });
        PanelData {
            dates: self.dates[..keep].to_vec(),
            symbols: self.symbols.clone(),
            features,
            target: self.target[..keep * n].to_vec(),
        }
    }

    /// Writes the panel in the loader's CSV layout, one row per (date, symbol),
    /// optionally with a trailing `target` column.
    pub fn write_csv<W: Write>(&self, writer: W, include_target: bool) -> Result<(), PanelError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["date", "symbol"];
        header.extend(Feature::ALL.iter().map(|f| f.name()));
        if include_target {
            header.push("target");
        }
        out.write_record(&header).map_err(csv_io)?;
        let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v}") };
        for (day, date) in self.dates.iter().enumerate() {
            for (stock, symbol) in self.symbols.iter().enumerate() {
                let mut row = vec![date.format("%Y-%m-%d").to_string(), symbol.clone()];
                row.extend(Feature::ALL.iter().map(|&f| fmt(self.value(f, day, stock))));
                if include_target {
                    row.push(fmt(self.target_day(day)[stock]));
                }
                out.write_record(&row).map_err(csv_io)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> PanelError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PanelError::Io(io),
        other => PanelError::Invalid(format!("{other:?}")),
    }
}

const CSV_HEADER: [&str; 8] = ["date", "symbol", "open", "close", "high", "low", "volume", "vwap"];

/// Loads a `date,symbol,open,close,high,low,volume,vwap` file into a dense
/// panel and attaches the forward-return target.
///
/// Rows may come in any order. Absent (date, symbol) pairs and empty fields
/// become missing cells. A ninth `target` column, when present, is taken as
/// the target verbatim instead of being derived from close prices.
pub fn load_csv(path: impl AsRef<Path>, spec: TargetSpec) -> Result<PanelData, PanelError> {
    let file = std::fs::File::open(path)?;
    let (panel, has_target) = read_csv(file)?;
    if has_target {
        Ok(panel)
    } else {
        compute_target(&panel, spec)
    }
}

/// Parses panel CSV from any reader; returns whether a target column was read.
pub fn read_csv<R: std::io::Read>(reader: R) -> Result<(PanelData, bool), PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| PanelError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_target = match names.as_slice() {
        h if h == CSV_HEADER => false,
        [head @ .., "target"] if *head == CSV_HEADER => true,
        _ => {
            return Err(PanelError::Parse {
                line: 1,
                message: format!("expected header `{}`", CSV_HEADER.join(",")),
            })
        }
    };

    struct Row {
        date: NaiveDate,
        symbol: String,
        values: [f64; 7],
    }

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| PanelError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| PanelError::Parse { line, message };
        if record.len() != names.len() {
            return Err(bad(format!("expected {} fields, found {}", names.len(), record.len())));
        }
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .map_err(|e| bad(format!("bad date `{}`: {e}", &record[0])))?;
        let symbol = record[1].to_string();
        if symbol.is_empty() {
            return Err(bad("empty symbol".into()));
        }
        let mut values = [f64::NAN; 7];
        for (slot, field) in values.iter_mut().zip(record.iter().skip(2)) {
            if !field.is_empty() {
                *slot = field
                    .parse::<f64>()
                    .map_err(|e| bad(format!("bad number `{field}`: {e}")))?;
            }
        }
        rows.push(Row { date, symbol, values });
    }

    let mut dates: Vec<NaiveDate> = rows.iter().map(|r| r.date).collect();
    dates.sort_unstable();
    dates.dedup();
    let mut symbols: Vec<String> = rows.iter().map(|r| r.symbol.clone()).collect();
    symbols.sort_unstable();
    symbols.dedup();
    if dates.is_empty() {
        return Err(PanelError::Invalid("no data rows".into()));
    }

    let (t, n) = (dates.len(), symbols.len());
    let mut features: [Vec<f64>; 6] = std::array::from_fn(|_| vec![f64::NAN; t * n]);
    let mut target = vec![f64::NAN; t * n];
    let mut seen = vec![false; t * n];
    for row in rows {
        let day = dates.binary_search(&row.date).expect("date collected above");
        let stock = symbols.binary_search(&row.symbol).expect("symbol collected above");
        if std::mem::replace(&mut seen[day * n + stock], true) {
            return Err(PanelError::Duplicate {
                date: row.date,
                symbol: row.symbol,
            });
        }
        for (f, series) in features.iter_mut().enumerate() {
            series[stock * t + day] = row.values[f];
        }
        target[day * n + stock] = row.values[6];
    }
    Ok((PanelData::new(dates, symbols, features, target)?, has_target))
}

/// Replaces the target with `close[t + h] / close[t] - 1`; the last `h` days
/// (and any day touching a missing close) are missing.
pub fn compute_target(panel: &PanelData, spec: TargetSpec) -> Result<PanelData, PanelError> {
    if spec.horizon == 0 {
        return Err(PanelError::Invalid("target horizon must be at least 1".into()));
    }
    let (t, n) = (panel.n_days(), panel.n_stocks());
    for stock in 0..n {
        for (day, &c) in panel.series(Feature::Close, stock).iter().enumerate() {
            if c <= 0.0 {
                return Err(PanelError::NonPositiveClose {
                    date: panel.dates[day],
                    symbol: panel.symbols[stock].clone(),
                    value: c,
                });
            }
        }
    }
    let mut target = vec![f64::NAN; t * n];
    for stock in 0..n {
        let close = panel.series(Feature::Close, stock);
        for day in 0..t.saturating_sub(spec.horizon) {
            target[day * n + stock] = close[day + spec.horizon] / close[day] - 1.0;
        }
    }
    panel.clone().with_target(target)
}
