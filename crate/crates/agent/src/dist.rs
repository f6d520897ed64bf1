//! Categorical distributions restricted to the legal actions.

use rand::Rng;

use crate::AgentError;

/// Log-probabilities over the vocabulary; masked entries are `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, AgentError> {
    assert_eq!(logits.len(), mask.len(), "logits and mask differ in length");
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(AgentError::AllMasked);
    }
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&z, _)| (z - max).exp())
        .sum();
    let lse = max + sum.ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { z - lse } else { f64::NEG_INFINITY })
        .collect())
}

/// Probabilities over the vocabulary; masked entries are exactly zero.
pub fn policy_distribution(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, AgentError> {
    Ok(masked_log_softmax(logits, mask)?
        .into_iter()
        .map(|lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() })
        .collect())
}

/// Entropy of a masked distribution given its log-probabilities.
pub fn entropy(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .filter(|lp| lp.is_finite())
        .map(|&lp| lp.exp() * lp)
        .sum::<f64>()
}

/// Inverse-CDF draw that can only land on entries with positive mass.
pub fn sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.expect("distribution has support")
}
