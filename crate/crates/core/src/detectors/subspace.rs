//! Virtual-logit matching: residual norm outside the principal feature
//! subspace, scaled to the logit range and combined with the energy score.

use nalgebra::{DMatrix, DVector};

use super::DetectorError;
use crate::eds::{EmbeddingSet, ModelHead};
use crate::numeric::{logsumexp, max_value, softmax, RowMatrix};

/// Residual-norm sums below this fraction of the total offset-feature norm
/// count as zero.
const ZERO_RESIDUAL_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct VimState {
    offset: Vec<f64>,
    /// `d × (d − D)` orthonormal basis of the residual space.
    basis: RowMatrix,
    alpha: f64,
}

/// `−W⁺ b`, the point the head maps to all-zero logits in the least-squares sense.
pub(crate) fn head_offset(head: &ModelHead) -> Vec<f64> {
    let w = head.weight().to_dmatrix();
    let svd = w.svd(true, true);
    let max_sv = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = max_sv * head.c().max(head.d()) as f64 * f64::EPSILON;
    let pinv = svd.pseudo_inverse(eps).expect("u and v were computed");
    let b = DVector::from_column_slice(head.bias());
    (-(pinv * b)).iter().copied().collect()
}

impl VimState {
    /// Fits the residual basis from the `d − D` smallest eigenvectors of the
    /// uncentered second moment of `f − o`, then sets
    /// `α = Σ max logit / Σ ‖Rᵀ(f − o)‖`.
    pub fn fit(
        train: &EmbeddingSet,
        head: &ModelHead,
        principal_dim: usize,
    ) -> Result<Self, DetectorError> {
        let d = train.d();
        if d < 2 {
            return Err(DetectorError::InvalidHyperparameter(
                "vim needs feature dimension >= 2".into(),
            ));
        }
        if principal_dim < 1 || principal_dim >= d {
            return Err(DetectorError::InvalidHyperparameter(format!(
                "vim subspace dimension must lie in [1, {}], got {principal_dim}",
                d - 1
            )));
        }
        let offset = head_offset(head);
        let n = train.n();
        let mut moment = DMatrix::<f64>::zeros(d, d);
        let mut centered = vec![0.0; d];
        for f in train.features().iter_rows() {
            for j in 0..d {
                centered[j] = f[j] - offset[j];
            }
            for a in 0..d {
                let ca = centered[a];
                for b in a..d {
                    moment[(a, b)] += ca * centered[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = moment[(a, b)] / n as f64;
                moment[(a, b)] = v;
                moment[(b, a)] = v;
            }
        }
        let eig = moment.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
        let residual_dim = d - principal_dim;
        let mut basis = RowMatrix::zeros(d, residual_dim);
        for (col, &idx) in order.iter().take(residual_dim).enumerate() {
            for row in 0..d {
                basis.row_mut(row)[col] = eig.eigenvectors[(row, idx)];
            }
        }

        let mut state = Self {
            offset,
            basis,
            alpha: 1.0,
        };
        let mut residual_sum = 0.0;
        let mut offset_norm_sum = 0.0;
        let mut logit_sum = 0.0;
        for i in 0..n {
            let f = train.feature(i);
            residual_sum += state.residual_norm(f);
            offset_norm_sum += f
                .iter()
                .zip(&state.offset)
                .map(|(x, o)| (x - o) * (x - o))
                .sum::<f64>()
                .sqrt();
            logit_sum += max_value(train.logit(i));
        }
        if residual_sum <= ZERO_RESIDUAL_RATIO * offset_norm_sum {
            return Err(DetectorError::ZeroResidual);
        }
        let alpha = logit_sum / residual_sum;
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(DetectorError::InvalidAlpha(alpha));
        }
        state.alpha = alpha;
        Ok(state)
    }

    pub(crate) fn from_parts(
        offset: Vec<f64>,
        basis: RowMatrix,
        alpha: f64,
    ) -> Result<Self, DetectorError> {
        if basis.rows() != offset.len() || basis.cols() == 0 || basis.cols() >= basis.rows() {
            return Err(DetectorError::State("inconsistent vim state".into()));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(DetectorError::InvalidAlpha(alpha));
        }
        Ok(Self {
            offset,
            basis,
            alpha,
        })
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn basis(&self) -> &RowMatrix {
        &self.basis
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `‖Rᵀ(f − o)‖₂`.
    pub fn residual_norm(&self, feature: &[f64]) -> f64 {
        let mut proj = vec![0.0; self.basis.cols()];
        for (row, (x, o)) in feature.iter().zip(&self.offset).enumerate() {
            let v = x - o;
            for (p, r) in proj.iter_mut().zip(self.basis.row(row)) {
                *p += r * v;
            }
        }
        proj.iter().map(|p| p * p).sum::<f64>().sqrt()
    }

    /// The virtual logit `α·‖Rᵀ(f − o)‖`.
    pub fn virtual_logit(&self, feature: &[f64]) -> f64 {
        self.alpha * self.residual_norm(feature)
    }

    pub fn score(&self, feature: &[f64], logits: &[f64]) -> f64 {
        self.virtual_logit(feature) - logsumexp(logits)
    }

    /// Softmax probability of the virtual class when it is appended to the
    /// real logits. A strictly increasing transform of [`VimState::score`].
    pub fn virtual_class_probability(&self, feature: &[f64], logits: &[f64]) -> f64 {
        let mut extended = logits.to_vec();
        extended.push(self.virtual_logit(feature));
        *softmax(&extended).last().expect("non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eds::{generate_synthetic, SyntheticSpec};

    fn data() -> (EmbeddingSet, ModelHead) {
        generate_synthetic(&SyntheticSpec {
            classes: 3,
            dim: 8,
            per_class: 60,
            centroid_scale: 6.0,
            noise_scale: 1.0,
            seed: 9,
        })
        .unwrap()
    }

    #[test]
    fn offset_maps_to_zero_logits_for_full_row_rank_head() {
        let (_, head) = data();
        let o = head_offset(&head);
        for l in head.logits(&o) {
            assert!(l.abs() < 1e-9);
        }
    }

    #[test]
    fn basis_is_orthonormal_and_alpha_positive() {
        let (train, head) = data();
        let s = VimState::fit(&train, &head, 4).unwrap();
        let r = s.basis();
        for a in 0..r.cols() {
            for b in 0..r.cols() {
                let dotp: f64 = (0..r.rows()).map(|i| r.get(i, a) * r.get(i, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((dotp - target).abs() < 1e-9);
            }
        }
        assert!(s.alpha() > 0.0);
    }

    #[test]
    fn zero_residual_reduces_to_negative_energy() {
        let (train, head) = data();
        let s = VimState::fit(&train, &head, 4).unwrap();
        let logits = [1.5, -0.5, 0.25];
        assert_eq!(s.score(s.offset(), &logits), -logsumexp(&logits));
    }

    #[test]
    fn features_inside_the_subspace_report_zero_residual() {
        // all features lie on span{e0, e1} shifted by the offset of this head
        let head = ModelHead::new(
            RowMatrix::from_rows(&[[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]),
            vec![0.0, 0.0],
        )
        .unwrap();
        let rows: Vec<[f64; 4]> = (0..20)
            .map(|i| [i as f64 * 0.3 + 1.0, (i % 7) as f64 - 2.0, 0.0, 0.0])
            .collect();
        let feats = RowMatrix::from_rows(&rows);
        let logits =
            RowMatrix::from_rows(&feats.iter_rows().map(|f| head.logits(f)).collect::<Vec<_>>());
        let set = EmbeddingSet::new(feats, logits, None, None).unwrap();
        assert!(matches!(VimState::fit(&set, &head, 2), Err(DetectorError::ZeroResidual)));
    }

    #[test]
    fn subspace_dimension_bounds() {
        let (train, head) = data();
        assert!(VimState::fit(&train, &head, 0).is_err());
        assert!(VimState::fit(&train, &head, 8).is_err());
        assert!(VimState::fit(&train, &head, 7).is_ok());
    }
}
