//! Cross-sectional normalization and information-coefficient metrics.
//!
//! All functions treat `NaN` as missing and work on pairwise-complete
//! observations. A cross-section with fewer than two usable values, or with
//! no spread, is reported as [`Degenerate`] instead of a silent zero.

use std::borrow::Cow;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("degenerate cross-section (constant or fewer than two observations)")]
pub struct Degenerate;

/// Relative spread below which a vector counts as constant.
const CONSTANT_TOLERANCE: f64 = 1e-12;

/// Magnitudes beyond which squares could overflow or underflow.
const SAFE_MAX: f64 = 1e150;
const SAFE_MIN: f64 = 1e-150;

/// `values` multiplied by a power of two (an exact operation) so that its
/// largest magnitude is near 1, when it is extreme enough to need it.
/// Correlations and normalized vectors are unchanged by the rescaling.
fn tame(values: &[f64]) -> Cow<'_, [f64]> {
    let scale = values
        .iter()
        .filter(|v| !v.is_nan())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || !scale.is_finite() || (SAFE_MIN..=SAFE_MAX).contains(&scale) {
        return Cow::Borrowed(values);
    }
    let factor = 2f64.powi(-scale.log2().round() as i32);
    Cow::Owned(values.iter().map(|v| v * factor).collect())
}

/// Centered sum of squares and the mean of the non-missing entries.
fn centered(values: &[f64]) -> Result<(f64, f64), Degenerate> {
    let mut count = 0usize;
    let mut sum = 0.0;
    let mut scale = 0.0f64;
    for &v in values.iter().filter(|v| !v.is_nan()) {
        count += 1;
        sum += v;
        scale = scale.max(v.abs());
    }
    if count < 2 {
        return Err(Degenerate);
    }
    let mean = sum / count as f64;
    let ss: f64 = values
        .iter()
        .filter(|v| !v.is_nan())
        .map(|v| (v - mean) * (v - mean))
        .sum();
    let std = (ss / count as f64).sqrt();
    if ss == 0.0 || std <= CONSTANT_TOLERANCE * scale {
        return Err(Degenerate);
    }
    Ok((mean, ss))
}

/// Whether the non-missing part of `values` is degenerate.
pub fn is_degenerate(values: &[f64]) -> bool {
    centered(&tame(values)).is_err()
}

/// Mean-zero, unit-length rescaling of the non-missing entries; missing
/// entries stay missing.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>, Degenerate> {
    let mut out = vec![0.0; values.len()];
    normalize_into(values, &mut out)?;
    Ok(out)
}

pub fn normalize_into(values: &[f64], out: &mut [f64]) -> Result<(), Degenerate> {
    assert_eq!(values.len(), out.len());
    let values = tame(values);
    let values = &values[..];
    let (mean, ss) = centered(values)?;
    let norm = ss.sqrt();
    for (o, &v) in out.iter_mut().zip(values) {
        *o = if v.is_nan() { f64::NAN } else { (v - mean) / norm };
    }
    Ok(())
}

/// Pearson correlation of the pairwise-complete entries of `u` and `v`.
pub fn daily_ic(u: &[f64], v: &[f64]) -> Result<f64, Degenerate> {
    assert_eq!(u.len(), v.len(), "cross-sections differ in length");
    let (u, v) = (tame(u), tame(v));
    let (u, v) = (&u[..], &v[..]);
    let (mut n, mut su, mut sv) = (0usize, 0.0, 0.0);
    let (mut scale_u, mut scale_v) = (0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        if a.is_nan() || b.is_nan() {
            continue;
        }
        n += 1;
        su += a;
        sv += b;
        scale_u = scale_u.max(a.abs());
        scale_v = scale_v.max(b.abs());
    }
    if n < 2 {
        return Err(Degenerate);
    }
    let (mu, mv) = (su / n as f64, sv / n as f64);
    let (mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        if a.is_nan() || b.is_nan() {
            continue;
        }
        let (da, db) = (a - mu, b - mv);
        suu += da * da;
        svv += db * db;
        suv += da * db;
    }
    let nf = n as f64;
    let flat = |ss: f64, scale: f64| ss == 0.0 || (ss / nf).sqrt() <= CONSTANT_TOLERANCE * scale;
    if flat(suu, scale_u) || flat(svv, scale_v) {
        return Err(Degenerate);
    }
    Ok((suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based average ranks of the non-missing entries; ties share the mean of
/// the ranks they span, missing entries stay missing.
pub fn rank(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![f64::NAN; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share ranks i+1..=j
        let shared = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = shared;
        }
        i = j;
    }
    ranks
}

/// Spearman-style IC: Pearson correlation of the average ranks of the
/// pairwise-complete entries.
pub fn rank_ic(u: &[f64], v: &[f64]) -> Result<f64, Degenerate> {
    assert_eq!(u.len(), v.len(), "cross-sections differ in length");
    let (u, v) = (tame(u), tame(v));
    let (u, v) = (&u[..], &v[..]);
    let (a, b): (Vec<f64>, Vec<f64>) = u
        .iter()
        .zip(v)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(&a, &b)| (a, b))
        .unzip();
    daily_ic(&rank(&a), &rank(&b))
}

/// Average of a per-day metric over the days where it is defined.
pub fn mean_over_days<'a, I, F>(days: I, metric: F) -> Result<f64, Degenerate>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    F: Fn(&[f64], &[f64]) -> Result<f64, Degenerate>,
{
    let (mut total, mut count) = (0.0, 0usize);
    for (u, v) in days {
        if let Ok(ic) = metric(u, v) {
            total += ic;
            count += 1;
        }
    }
    if count == 0 {
        Err(Degenerate)
    } else {
        Ok(total / count as f64)
    }
}

/// Mean daily IC; degenerate days are excluded from the average.
pub fn mean_ic<'a, I>(days: I) -> Result<f64, Degenerate>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    mean_over_days(days, daily_ic)
}

pub fn mean_rank_ic<'a, I>(days: I) -> Result<f64, Degenerate>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    mean_over_days(days, rank_ic)
}

/// Splits two day-major matrices into paired per-day cross-sections.
pub fn paired_days<'a>(
    u: &'a [f64],
    v: &'a [f64],
    n_stocks: usize,
) -> impl Iterator<Item = (&'a [f64], &'a [f64])> + 'a {
    assert_eq!(u.len(), v.len());
    u.chunks_exact(n_stocks).zip(v.chunks_exact(n_stocks))
}
