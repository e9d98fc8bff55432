//! Rejection curves and the prediction rejection ratio (PRR).
//!
//! Samples are rejected in order of decreasing uncertainty and a rejected
//! sample counts as handled correctly, so the curve tracks
//! `(#errors among retained) / N` from the base error rate down to 0. The
//! random baseline is the straight line between those endpoints.
//!
//! All areas are trapezoid sums over `ρ_j = j/N`. Scaled by `2N²` they are
//! integers, so the ratio is computed exactly from integer counts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricError;

/// Above this fraction of tied samples the tie-randomized PRR is reported too.
pub const TIE_DIAGNOSTIC_FRACTION: f64 = 0.01;
const TIE_SHUFFLES: usize = 10;
const TIE_SHUFFLE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    /// `j / N` for `j = 0..=N`.
    pub fractions: Vec<f64>,
    /// Error over the full set after rejecting the first `j` samples.
    pub errors: Vec<f64>,
}

impl RejectionCurve {
    /// The random-rejection line at each fraction.
    pub fn random_baseline(&self) -> Vec<f64> {
        let base = self.errors.first().copied().unwrap_or(0.0);
        self.fractions.iter().map(|r| base * (1.0 - r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrrReport {
    /// Percent; 100 is oracle ordering, 0 random, negative anti-correlated.
    pub prr: f64,
    /// Fraction of samples sharing their score with another sample.
    pub tie_fraction: f64,
    /// Mean PRR over random tie orders, when `tie_fraction` exceeds
    /// [`TIE_DIAGNOSTIC_FRACTION`].
    pub tie_randomized: Option<f64>,
}

fn validate(scores: &[f64], correct: &[bool]) -> Result<usize, MetricError> {
    if scores.len() != correct.len() {
        return Err(MetricError::LengthMismatch(scores.len(), correct.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(correct.iter().filter(|&&c| !c).count())
}

/// Descending by score, ties kept in the order of `base`.
fn rejection_order(scores: &[f64], mut base: Vec<usize>) -> Vec<usize> {
    base.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    base
}

/// `Σ_{j<N} (m_j + m_{j+1})` where `m_j` counts errors left after rejecting `j`.
fn doubled_area_sum(order: impl Iterator<Item = bool>, errors: usize) -> i128 {
    let mut remaining = errors as i128;
    let mut total = 0i128;
    for is_error in order {
        let next = remaining - is_error as i128;
        total += remaining + next;
        remaining = next;
    }
    total
}

fn prr_for_order(order: &[usize], correct: &[bool], errors: usize) -> f64 {
    let n = correct.len() as i128;
    let e = errors as i128;
    let random = e * n;
    let score_sum = doubled_area_sum(order.iter().map(|&i| !correct[i]), errors);
    let oracle_sum = doubled_area_sum((0..correct.len()).map(|j| j < errors), errors);
    let numerator = random - score_sum;
    let denominator = random - oracle_sum;
    100.0 * (numerator as f64 / denominator as f64)
}

fn tie_fraction(scores: &[f64]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tied = 0usize;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        if end - start > 1 {
            tied += end - start;
        }
        start = end;
    }
    tied as f64 / scores.len() as f64
}

/// Rejection curve for `scores` (higher = rejected first).
pub fn rejection_curve(scores: &[f64], correct: &[bool]) -> Result<RejectionCurve, MetricError> {
    let errors = validate(scores, correct)?;
    let n = scores.len();
    let order = rejection_order(scores, (0..n).collect());
    let mut remaining = errors;
    let mut fractions = Vec::with_capacity(n + 1);
    let mut curve = Vec::with_capacity(n + 1);
    fractions.push(0.0);
    curve.push(if n == 0 { 0.0 } else { remaining as f64 / n as f64 });
    for (j, &i) in order.iter().enumerate() {
        if !correct[i] {
            remaining -= 1;
        }
        fractions.push((j + 1) as f64 / n as f64);
        curve.push(remaining as f64 / n as f64);
    }
    Ok(RejectionCurve {
        fractions,
        errors: curve,
    })
}

/// Prediction rejection ratio in percent:
/// `100 · AR_score / AR_oracle`, where each AR is the area between the
/// random-rejection line and the respective rejection curve.
///
/// Ties in `scores` are broken by input order. Undefined (an error, never 0)
/// unless there is at least one error and one correct prediction.
pub fn prr(scores: &[f64], correct: &[bool]) -> Result<PrrReport, MetricError> {
    let errors = validate(scores, correct)?;
    let n = scores.len();
    if n < 2 {
        return Err(MetricError::Undefined("prr needs at least two samples"));
    }
    if errors == 0 || errors == n {
        return Err(MetricError::Undefined("prr needs both correct and incorrect predictions"));
    }
    let order = rejection_order(scores, (0..n).collect());
    let value = prr_for_order(&order, correct, errors);

    let ties = tie_fraction(scores);
    let tie_randomized = (ties > TIE_DIAGNOSTIC_FRACTION).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(TIE_SHUFFLE_SEED);
        let total: f64 = (0..TIE_SHUFFLES)
            .map(|_| {
                let mut base: Vec<usize> = (0..n).collect();
                base.shuffle(&mut rng);
                prr_for_order(&rejection_order(scores, base), correct, errors)
            })
            .sum();
        total / TIE_SHUFFLES as f64
    });
    Ok(PrrReport {
        prr: value,
        tie_fraction: ties,
        tie_randomized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_four_samples() {
        let correct = [true, false, true, false];
        let scores = [0.1, 0.9, 0.2, 0.8];
        let r = prr(&scores, &correct).unwrap();
        assert_eq!(r.prr, 100.0);
        assert_eq!(r.tie_fraction, 0.0);
        assert_eq!(r.tie_randomized, None);

        let curve = rejection_curve(&scores, &correct).unwrap();
        assert_eq!(curve.errors, vec![0.5, 0.25, 0.0, 0.0, 0.0]);
        assert_eq!(curve.random_baseline(), vec![0.5, 0.375, 0.25, 0.125, 0.0]);
    }

    #[test]
    fn anti_oracle_is_minus_one_hundred() {
        let correct = [true, false, true, false, true];
        let scores: Vec<f64> = correct.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        assert_eq!(prr(&scores, &correct).unwrap().prr, -100.0);
    }

    #[test]
    fn degenerate_inputs_are_undefined_not_zero() {
        assert!(matches!(prr(&[0.1, 0.2], &[true, true]), Err(MetricError::Undefined(_))));
        assert!(matches!(prr(&[0.1, 0.2], &[false, false]), Err(MetricError::Undefined(_))));
        assert!(matches!(prr(&[0.1], &[false]), Err(MetricError::Undefined(_))));
        assert!(matches!(prr(&[0.1], &[false, true]), Err(MetricError::LengthMismatch(1, 2))));
    }

    #[test]
    fn heavy_ties_report_randomized_diagnostic() {
        let correct = [true, false, true, true, false, true, true, true];
        let scores = [0.0; 8];
        let r = prr(&scores, &correct).unwrap();
        assert_eq!(r.tie_fraction, 1.0);
        let randomized = r.tie_randomized.unwrap();
        assert!(randomized.is_finite() && randomized.abs() <= 100.0);
    }

    #[test]
    fn curve_ends_at_zero() {
        let c = rejection_curve(&[0.3, 0.1, 0.2], &[false, true, false]).unwrap();
        assert_eq!(*c.errors.last().unwrap(), 0.0);
        assert_eq!(c.fractions, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    }
}
