//! Deep-ensemble aggregation: averaged predictions, total uncertainty
//! (entropy of the mean) and epistemic uncertainty (mutual information).
//!
//! Entropies are in nats.

use crate::eds::EmbeddingSet;
use crate::numeric::{argmax, softmax, RowMatrix};

/// Per-vector tolerance on `Σ p = 1`.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnsembleError {
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("member {member} has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        member: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("member {member}, sample {sample} is not a probability vector")]
    NotAProbability { member: usize, sample: usize },
}

/// `M × N × c` member probabilities for the same N samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBatch {
    members: Vec<RowMatrix>,
}

impl EnsembleBatch {
    pub fn new(members: Vec<RowMatrix>) -> Result<Self, EnsembleError> {
        let first = members.first().ok_or(EnsembleError::NoMembers)?;
        let shape = (first.rows(), first.cols());
        for (m, probs) in members.iter().enumerate() {
            if (probs.rows(), probs.cols()) != shape {
                return Err(EnsembleError::ShapeMismatch {
                    member: m,
                    expected: shape,
                    got: (probs.rows(), probs.cols()),
                });
            }
            for (i, p) in probs.iter_rows().enumerate() {
                let sum: f64 = p.iter().sum();
                if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                    return Err(EnsembleError::NotAProbability { member: m, sample: i });
                }
            }
        }
        Ok(Self { members })
    }

    /// Softmax of each member dump's logits.
    pub fn from_member_logits(sets: &[&EmbeddingSet]) -> Result<Self, EnsembleError> {
        let members = sets
            .iter()
            .map(|s| {
                let rows: Vec<Vec<f64>> = s.logits().iter_rows().map(softmax).collect();
                if rows.is_empty() {
                    RowMatrix::zeros(0, s.c())
                } else {
                    RowMatrix::from_rows(&rows)
                }
            })
            .collect();
        Self::new(members)
    }

    pub fn members(&self) -> usize {
        self.members.len()
    }

    pub fn samples(&self) -> usize {
        self.members[0].rows()
    }

    pub fn classes(&self) -> usize {
        self.members[0].cols()
    }

    pub fn member(&self, m: usize) -> &RowMatrix {
        &self.members[m]
    }

    fn mean_row(&self, i: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.classes()];
        for m in &self.members {
            for (a, p) in mean.iter_mut().zip(m.row(i)) {
                *a += p;
            }
        }
        let scale = self.members.len() as f64;
        mean.iter_mut().for_each(|v| *v /= scale);
        mean
    }
}

/// Shannon entropy in nats with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Averaged member probabilities and the resulting argmax predictions
/// (lowest index on ties).
pub fn de_average(batch: &EnsembleBatch) -> (RowMatrix, Vec<usize>) {
    let n = batch.samples();
    let mut mean = RowMatrix::zeros(n, batch.classes());
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let row = batch.mean_row(i);
        preds.push(argmax(&row));
        mean.row_mut(i).copy_from_slice(&row);
    }
    (mean, preds)
}

/// `H(p̄)` per sample.
pub fn total_uncertainty(batch: &EnsembleBatch) -> Vec<f64> {
    (0..batch.samples()).map(|i| entropy(&batch.mean_row(i))).collect()
}

/// `H(p̄) − (1/M) Σ_m H(p^m)` per sample, with small negative round-off
/// clamped to zero.
pub fn epistemic_uncertainty(batch: &EnsembleBatch) -> Vec<f64> {
    let m = batch.members() as f64;
    (0..batch.samples())
        .map(|i| {
            if batch.members() == 1 {
                return 0.0;
            }
            let total = entropy(&batch.mean_row(i));
            let expected: f64 = batch.members.iter().map(|p| entropy(p.row(i))).sum::<f64>() / m;
            let mi = total - expected;
            if (-1e-12..0.0).contains(&mi) {
                0.0
            } else {
                mi
            }
        })
        .collect()
}
