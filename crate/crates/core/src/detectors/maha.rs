//! Minimum Mahalanobis distance to class centroids under a tied covariance.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Cholesky, DMatrix};

use super::DetectorError;
use crate::numeric::RowMatrix;

/// Relative ridge added to the tied covariance: `Σ + ε·tr(Σ)/d·I`.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MahaState {
    classes: Vec<u32>,
    centroids: RowMatrix,
    /// Lower-triangular Cholesky factor `L` with `L Lᵀ = Σ`.
    factor: RowMatrix,
}

impl MahaState {
    /// Class means plus the Cholesky factor of the ridge-regularized tied
    /// covariance `(1/n) Σ_k Σ_{i∈k} (f_i − μ_k)(f_i − μ_k)ᵀ`.
    pub fn fit(features: &RowMatrix, labels: &[u32]) -> Result<Self, DetectorError> {
        let (n, d) = (features.rows(), features.cols());
        let classes: Vec<u32> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let slot: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(i, &k)| (k, i)).collect();

        let mut centroids = RowMatrix::zeros(classes.len(), d);
        let mut counts = vec![0usize; classes.len()];
        for (f, l) in features.iter_rows().zip(labels) {
            let k = slot[l];
            counts[k] += 1;
            for (m, x) in centroids.row_mut(k).iter_mut().zip(f) {
                *m += x;
            }
        }
        for (k, &cnt) in counts.iter().enumerate() {
            centroids.row_mut(k).iter_mut().for_each(|v| *v /= cnt as f64);
        }

        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = vec![0.0; d];
        for (f, l) in features.iter_rows().zip(labels) {
            let mu = centroids.row(slot[l]);
            for j in 0..d {
                centered[j] = f[j] - mu[j];
            }
            for a in 0..d {
                let ca = centered[a];
                for b in a..d {
                    cov[(a, b)] += ca * centered[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / n as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        let ridge = COVARIANCE_RIDGE * cov.trace() / d as f64;
        for a in 0..d {
            cov[(a, a)] += ridge;
        }
        if !cov.iter().all(|v| v.is_finite()) {
            return Err(DetectorError::NonFinite("covariance"));
        }
        let chol = Cholesky::new(cov).ok_or(DetectorError::NotPositiveDefinite)?;
        Ok(Self {
            classes,
            centroids,
            factor: RowMatrix::from_dmatrix(&chol.l()),
        })
    }

    pub(crate) fn from_parts(
        classes: Vec<u32>,
        centroids: RowMatrix,
        factor: RowMatrix,
    ) -> Result<Self, DetectorError> {
        let d = centroids.cols();
        if classes.len() != centroids.rows() || factor.rows() != d || factor.cols() != d {
            return Err(DetectorError::State("inconsistent mahalanobis state".into()));
        }
        if (0..d).any(|i| factor.get(i, i) <= 0.0) {
            return Err(DetectorError::NotPositiveDefinite);
        }
        Ok(Self {
            classes,
            centroids,
            factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn classes(&self) -> &[u32] {
        &self.classes
    }

    pub fn centroids(&self) -> &RowMatrix {
        &self.centroids
    }

    pub fn factor(&self) -> &RowMatrix {
        &self.factor
    }

    /// `(f − μ)ᵀ Σ⁻¹ (f − μ)` via forward substitution `L y = f − μ`.
    pub fn squared_distance(&self, feature: &[f64], centroid: &[f64]) -> f64 {
        let d = self.dim();
        let mut y = vec![0.0; d];
        let mut total = 0.0;
        for i in 0..d {
            let row = self.factor.row(i);
            let mut acc = feature[i] - centroid[i];
            for j in 0..i {
                acc -= row[j] * y[j];
            }
            y[i] = acc / row[i];
            total += y[i] * y[i];
        }
        total
    }

    pub fn score(&self, feature: &[f64]) -> f64 {
        self.centroids
            .iter_rows()
            .map(|mu| self.squared_distance(feature, mu))
            .fold(f64::INFINITY, f64::min)
    }
}
