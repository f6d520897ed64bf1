//! Synthetic panels with a planted, recoverable target.

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::dsl::Expression;
use crate::eval::{evaluate, semantic_validity, DEFAULT_MIN_VALID_FRACTION};
use crate::metrics::normalize;
use crate::panel::{compute_target, DayRange, PanelData, TargetSpec};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("panel needs at least 2 stocks and 2 days, got {n} x {t}")]
    TooSmall { n: usize, t: usize },
    #[error("noise sigma must be finite and non-negative, got {0}")]
    Noise(f64),
    #[error("planted alpha `{0}` is not semantically valid on the generated panel")]
    InvalidPlanted(String),
    #[error(transparent)]
    Panel(#[from] crate::panel::PanelError),
}

/// The two-alpha plant used by the recovery experiments: a short
/// mean-reversion ratio and a relative-volume signal.
pub fn default_planted() -> Vec<(Expression, f64)> {
    [
        ("Div(Mean($close,10),$close)", 0.6),
        ("Div($volume,Mean($volume,20))", 0.4),
    ]
    .into_iter()
    .map(|(s, w)| (Expression::parse_infix(s).expect("built-in formula"), w))
    .collect()
}

pub fn weekday_calendar(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

/// Generates `n` stocks over `t` weekdays. Prices follow a geometric random
/// walk driven by a shared daily market shock plus idiosyncratic noise.
///
/// With planted alphas the target is, per day,
/// `N(sum_i w_i N(f_i) + noise)` where the noise vector is normalized and
/// scaled to `noise_sigma` times the signal's norm (so `noise_sigma = 1` is a
/// 1:1 signal-to-noise ratio). Days where the signal is degenerate are missing.
/// Without planted alphas the target is the realized 20-day forward return.
pub fn synth_generate(
    seed: u64,
    n: usize,
    t: usize,
    planted: &[(Expression, f64)],
    noise_sigma: f64,
) -> Result<PanelData, SynthError> {
    if n < 2 || t < 2 {
        return Err(SynthError::TooSmall { n, t });
    }
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(SynthError::Noise(noise_sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    let market = Normal::new(0.0, 0.01).expect("valid sigma");
    let shocks: Vec<f64> = (0..t).map(|_| market.sample(&mut rng)).collect();

    let mut features: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(n * t));
    for _ in 0..n {
        let beta = rng.random_range(0.5..1.5);
        let vol = rng.random_range(0.01..0.03);
        let base_volume = (13.0 + std_normal(&mut rng)).exp();
        // wide level dispersion so raw price levels carry no return information
        let mut close = rng.random_range(2f64.ln()..200f64.ln()).exp();
        let mut log_vol_dev = 0.0;
        for &shock in &shocks {
            let open = close * (0.003 * std_normal(&mut rng)).exp();
            close = open * (beta * shock + vol * std_normal(&mut rng)).exp();
            let high = open.max(close) * (0.005 * std_normal(&mut rng).abs()).exp();
            let low = open.min(close) * (-0.005 * std_normal(&mut rng).abs()).exp();
            log_vol_dev = 0.7 * log_vol_dev + 0.3 * std_normal(&mut rng);
            let volume = base_volume * log_vol_dev.exp();
            let vwap = low + (high - low) * rng.random_range(0.25..0.75);
            for (col, v) in features.iter_mut().zip([open, close, high, low, volume, vwap]) {
                col.push(v);
            }
        }
    }

    let dates = weekday_calendar(NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"), t);
    let symbols = (0..n).map(|i| format!("S{i:04}")).collect();
    let panel = PanelData::new(dates, symbols, features, vec![f64::NAN; n * t])?;
    if planted.is_empty() {
        return Ok(compute_target(&panel, TargetSpec::default())?);
    }

    let full = panel.full_range();
    let mut signals = Vec::with_capacity(planted.len());
    for (expr, _) in planted {
        let m = evaluate(expr, &panel, full);
        if !semantic_validity(&m, DEFAULT_MIN_VALID_FRACTION) {
            return Err(SynthError::InvalidPlanted(expr.to_infix_string()));
        }
        signals.push(m.normalized());
    }

    let mut target = vec![f64::NAN; n * t];
    let mut noise = vec![0.0; n];
    for day in 0..t {
        // draw noise every day so the stream does not depend on warm-up
        noise.iter_mut().for_each(|e| *e = std_normal(&mut rng));
        let mut signal = vec![0.0; n];
        for (m, (_, w)) in signals.iter().zip(planted) {
            signal.iter_mut().zip(m.day(day)).for_each(|(s, v)| *s += w * v);
        }
        let norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            continue;
        }
        let mut mixed = signal;
        if noise_sigma > 0.0 {
            if let Ok(unit) = normalize(&noise) {
                mixed
                    .iter_mut()
                    .zip(&unit)
                    .for_each(|(s, e)| *s += noise_sigma * norm * e);
            }
        }
        if let Ok(z) = normalize(&mixed) {
            target[day * n..(day + 1) * n].copy_from_slice(&z);
        }
    }
    Ok(panel.with_target(target)?)
}

/// Day ranges for a train/valid/test split of consecutive days.
pub fn split_ranges(train: usize, valid: usize, test: usize) -> [DayRange; 3] {
    [
        DayRange::new(0, train - 1),
        DayRange::new(train, train + valid - 1),
        DayRange::new(train + valid, train + valid + test - 1),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mean_ic, paired_days};
    use crate::panel::Feature;

    fn planted_ic(panel: &PanelData, expr: &Expression) -> f64 {
        let m = evaluate(expr, panel, panel.full_range());
        mean_ic(paired_days(m.values(), panel.target(), panel.n_stocks())).unwrap()
    }

    #[test]
    fn deterministic_per_seed() {
        let plant = default_planted();
        let a = synth_generate(7, 5, 120, &plant, 1.0).unwrap();
        let b = synth_generate(7, 5, 120, &plant, 1.0).unwrap();
        let c = synth_generate(8, 5, 120, &plant, 1.0).unwrap();
        let bits = |p: &PanelData| -> Vec<u64> {
            Feature::ALL
                .iter()
                .flat_map(|&f| (0..p.n_stocks()).flat_map(move |s| p.series(f, s).to_vec()))
                .chain(p.target().iter().copied())
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn price_invariants() {
        let p = synth_generate(1, 8, 200, &[], 0.0).unwrap();
        for s in 0..8 {
            for d in 0..200 {
                let v = |f| p.value(f, d, s);
                let (o, c, h, l) = (v(Feature::Open), v(Feature::Close), v(Feature::High), v(Feature::Low));
                assert!(h >= o.max(c) && o.min(c) >= l && l > 0.0);
                assert!(v(Feature::Volume) > 0.0);
                assert!((l..=h).contains(&v(Feature::Vwap)));
            }
        }
        assert!(p
            .dates()
            .iter()
            .all(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)));
    }

    #[test]
    fn noiseless_single_plant_is_the_target() {
        let e = Expression::parse_infix("Div(Mean($close,10),$close)").unwrap();
        let p = synth_generate(3, 20, 80, &[(e.clone(), 1.0)], 0.0).unwrap();
        assert!((planted_ic(&p, &e) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn heavy_noise_buries_the_plant() {
        let e = Expression::parse_infix("Div(Mean($close,10),$close)").unwrap();
        let p = synth_generate(4, 50, 200, &[(e.clone(), 1.0)], 10.0).unwrap();
        let ic = planted_ic(&p, &e);
        assert!(ic < 0.3, "{ic}");
    }

    #[test]
    fn unit_noise_halves_the_variance() {
        let e = Expression::parse_infix("Div($volume,Mean($volume,20))").unwrap();
        let p = synth_generate(5, 50, 300, &[(e.clone(), 1.0)], 1.0).unwrap();
        // E[IC] ~ 1/sqrt(2) at 1:1
        let ic = planted_ic(&p, &e);
        assert!((ic - 0.707).abs() < 0.05, "{ic}");
    }

    #[test]
    fn invalid_plant_is_an_error() {
        let e = Expression::parse_infix("Log(Sub($close,$close))").unwrap();
        let err = synth_generate(1, 5, 40, &[(e, 1.0)], 0.0).unwrap_err();
        assert!(matches!(err, SynthError::InvalidPlanted(_)));
        assert!(matches!(
            synth_generate(1, 1, 40, &[], 0.0),
            Err(SynthError::TooSmall { .. })
        ));
    }
}
