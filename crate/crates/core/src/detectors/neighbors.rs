//! k-th nearest neighbor distance in unit-normalized feature space.
//!
//! Exact brute-force search over the whole bank.

use super::DetectorError;
use crate::numeric::{l2_norm, RowMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct KnnState {
    bank: RowMatrix,
    k: usize,
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = l2_norm(v);
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

impl KnnState {
    pub fn fit(features: &RowMatrix, k: usize) -> Result<Self, DetectorError> {
        if k < 1 || k > features.rows() {
            return Err(DetectorError::InvalidHyperparameter(format!(
                "knn k must lie in [1, {}], got {k}",
                features.rows()
            )));
        }
        let mut bank = RowMatrix::zeros(features.rows(), features.cols());
        for (i, f) in features.iter_rows().enumerate() {
            if l2_norm(f) == 0.0 {
                return Err(DetectorError::ZeroNormFeature(i));
            }
            bank.row_mut(i).copy_from_slice(&unit(f));
        }
        Ok(Self { bank, k })
    }

    pub(crate) fn from_parts(bank: RowMatrix, k: usize) -> Result<Self, DetectorError> {
        if k < 1 || k > bank.rows() {
            return Err(DetectorError::State("knn k out of range for bank".into()));
        }
        Ok(Self { bank, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.bank.cols()
    }

    pub fn bank(&self) -> &RowMatrix {
        &self.bank
    }

    pub fn score(&self, feature: &[f64]) -> f64 {
        let q = unit(feature);
        let mut dists: Vec<f64> = self
            .bank
            .iter_rows()
            .map(|b| b.iter().zip(&q).map(|(x, y)| (x - y) * (x - y)).sum())
            .collect();
        let (_, kth, _) = dists.select_nth_unstable_by(self.k - 1, f64::total_cmp);
        kth.sqrt()
    }
}
