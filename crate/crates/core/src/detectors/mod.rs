//! Post-hoc OOD detectors with a `fit → score` lifecycle.
//!
//! Every score follows one orientation: higher means more out-of-distribution.
//! Detectors whose native quantity is an in-distribution confidence (max
//! softmax, max logit, gradient norm, energy) are negated accordingly.

mod logit;
mod maha;
mod neighbors;
mod react;
mod serialize;
mod subspace;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eds::{EmbeddingSet, ModelHead};

pub use logit::{gen_score, gradnorm_score, klm_templates, kl_to_template, KlmState};
pub use maha::MahaState;
pub use neighbors::KnnState;
pub use react::ReactState;
pub use serialize::{read_state, read_state_file, write_state, write_state_file, STATE_MAGIC};
pub use subspace::VimState;

/// Stored logits and `W·f + b` may differ by this much before fit warns.
pub const HEAD_CONSISTENCY_TOLERANCE: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error("{0} needs a model head")]
    MissingHead(DetectorKind),
    #[error("{0} needs labeled training data")]
    MissingLabels(DetectorKind),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("dimension mismatch: expected {what}={expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("regularized covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("training features have no residual component outside the principal subspace")]
    ZeroResidual,
    #[error("virtual-logit scale must be positive and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("training feature {0} has zero norm")]
    ZeroNormFeature(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("state format: {0}")]
    State(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Msp,
    Maha,
    React,
    GradNorm,
    Mls,
    Klm,
    Knn,
    Vim,
    Gen,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 9] = [
        DetectorKind::Msp,
        DetectorKind::Maha,
        DetectorKind::React,
        DetectorKind::GradNorm,
        DetectorKind::Mls,
        DetectorKind::Klm,
        DetectorKind::Knn,
        DetectorKind::Vim,
        DetectorKind::Gen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Msp => "msp",
            DetectorKind::Maha => "maha",
            DetectorKind::React => "react",
            DetectorKind::GradNorm => "gradnorm",
            DetectorKind::Mls => "mls",
            DetectorKind::Klm => "klm",
            DetectorKind::Knn => "knn",
            DetectorKind::Vim => "vim",
            DetectorKind::Gen => "gen",
        }
    }

    pub fn needs_head(self) -> bool {
        matches!(self, DetectorKind::React | DetectorKind::Vim)
    }

    pub fn needs_labels(self) -> bool {
        matches!(self, DetectorKind::Maha)
    }

    pub(crate) fn tag(self) -> u32 {
        self as u32
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = DetectorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let kind = match key.as_str() {
            "msp" => DetectorKind::Msp,
            "maha" | "mahalanobis" => DetectorKind::Maha,
            "react" | "r+e" | "react_energy" => DetectorKind::React,
            "gradnorm" | "grn" => DetectorKind::GradNorm,
            "mls" | "maxlogit" => DetectorKind::Mls,
            "klm" => DetectorKind::Klm,
            "knn" => DetectorKind::Knn,
            "vim" => DetectorKind::Vim,
            "gen" => DetectorKind::Gen,
            _ => {
                return Err(DetectorError::InvalidHyperparameter(format!(
                    "unknown detector {s:?}"
                )))
            }
        };
        Ok(kind)
    }
}

/// Per-kind hyperparameter overrides. `None` means the size-dependent default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Percentile of pooled train activations used as the truncation clamp.
    pub react_q: f64,
    /// Neighbor rank; defaults to `round(2.5·c)`.
    pub knn_k: Option<usize>,
    /// Principal subspace dimension; defaults to `round(d/2)` clamped to `[1, d−1]`.
    pub vim_dim: Option<usize>,
    pub gen_gamma: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            react_q: 98.0,
            knn_k: None,
            vim_dim: None,
            gen_gamma: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn resolve_knn_k(&self, c: usize) -> usize {
        self.knn_k.unwrap_or_else(|| ((2.5 * c as f64).round() as usize).max(1))
    }

    pub fn resolve_vim_dim(&self, d: usize) -> usize {
        self.vim_dim
            .unwrap_or_else(|| ((d as f64 / 2.0).round() as usize).clamp(1, d.saturating_sub(1).max(1)))
    }
}

/// A detector choice plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    #[serde(default)]
    pub params: Hyperparams,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind) -> Self {
        Self {
            kind,
            params: Hyperparams::default(),
        }
    }

    pub fn with_params(kind: DetectorKind, params: Hyperparams) -> Self {
        Self { kind, params }
    }
}

/// Parses a comma-separated detector list such as `msp,maha,vim`.
pub fn parse_detector_list(list: &str) -> Result<Vec<DetectorKind>, DetectorError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Fitted, immutable detector statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorState {
    Msp,
    Mls,
    GradNorm,
    Gen { gamma: f64 },
    Maha(MahaState),
    React(ReactState),
    Klm(KlmState),
    Knn(KnnState),
    Vim(VimState),
}

fn check_head(head: &ModelHead, train: &EmbeddingSet) -> Result<(), DetectorError> {
    if head.c() != train.c() {
        return Err(DetectorError::DimensionMismatch {
            what: "c",
            expected: train.c(),
            got: head.c(),
        });
    }
    if head.d() != train.d() {
        return Err(DetectorError::DimensionMismatch {
            what: "d",
            expected: train.d(),
            got: head.d(),
        });
    }
    let gap = head.max_logit_discrepancy(train);
    if gap > HEAD_CONSISTENCY_TOLERANCE {
        log::warn!(
            "stored logits differ from W·f+b by up to {gap:.3e}; the head may carry extra scaling"
        );
    }
    Ok(())
}

/// Fits `spec.kind` on the in-distribution training set.
pub fn fit(
    spec: &DetectorSpec,
    train: &EmbeddingSet,
    head: Option<&ModelHead>,
) -> Result<DetectorState, DetectorError> {
    let kind = spec.kind;
    let params = &spec.params;
    if train.n() == 0 {
        return Err(DetectorError::EmptyTrainSet);
    }
    let head = if kind.needs_head() {
        let h = head.ok_or(DetectorError::MissingHead(kind))?;
        check_head(h, train)?;
        Some(h)
    } else {
        None
    };
    let state = match kind {
        DetectorKind::Msp => DetectorState::Msp,
        DetectorKind::Mls => DetectorState::Mls,
        DetectorKind::GradNorm => DetectorState::GradNorm,
        DetectorKind::Gen => {
            let gamma = params.gen_gamma;
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(DetectorError::InvalidHyperparameter(format!(
                    "gen gamma must lie in (0, 1), got {gamma}"
                )));
            }
            DetectorState::Gen { gamma }
        }
        DetectorKind::Maha => {
            let labels = train.labels().ok_or(DetectorError::MissingLabels(kind))?;
            DetectorState::Maha(MahaState::fit(train.features(), labels)?)
        }
        DetectorKind::React => {
            DetectorState::React(ReactState::fit(train, head.expect("checked"), params.react_q)?)
        }
        DetectorKind::Klm => DetectorState::Klm(KlmState::fit(train)),
        DetectorKind::Knn => {
            let k = params.resolve_knn_k(train.c());
            DetectorState::Knn(KnnState::fit(train.features(), k)?)
        }
        DetectorKind::Vim => {
            let dim = params.resolve_vim_dim(train.d());
            DetectorState::Vim(VimState::fit(train, head.expect("checked"), dim)?)
        }
    };
    Ok(state)
}

impl DetectorState {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorState::Msp => DetectorKind::Msp,
            DetectorState::Mls => DetectorKind::Mls,
            DetectorState::GradNorm => DetectorKind::GradNorm,
            DetectorState::Gen { .. } => DetectorKind::Gen,
            DetectorState::Maha(_) => DetectorKind::Maha,
            DetectorState::React(_) => DetectorKind::React,
            DetectorState::Klm(_) => DetectorKind::Klm,
            DetectorState::Knn(_) => DetectorKind::Knn,
            DetectorState::Vim(_) => DetectorKind::Vim,
        }
    }

    /// `(d, c)` the state was fitted with, where the state pins them.
    fn expected_dims(&self) -> (Option<usize>, Option<usize>) {
        match self {
            DetectorState::Msp
            | DetectorState::Mls
            | DetectorState::GradNorm
            | DetectorState::Gen { .. } => (None, None),
            DetectorState::Maha(s) => (Some(s.dim()), None),
            DetectorState::React(s) => (Some(s.head().d()), Some(s.head().c())),
            DetectorState::Klm(s) => (None, Some(s.classes())),
            DetectorState::Knn(s) => (Some(s.dim()), None),
            DetectorState::Vim(s) => (Some(s.dim()), None),
        }
    }

    fn check_batch(&self, batch: &EmbeddingSet) -> Result<(), DetectorError> {
        let (d, c) = self.expected_dims();
        if let Some(d) = d {
            if batch.d() != d {
                return Err(DetectorError::DimensionMismatch {
                    what: "d",
                    expected: d,
                    got: batch.d(),
                });
            }
        }
        if let Some(c) = c {
            if batch.c() != c {
                return Err(DetectorError::DimensionMismatch {
                    what: "c",
                    expected: c,
                    got: batch.c(),
                });
            }
        }
        Ok(())
    }

    /// OOD score of one sample.
    pub fn score_sample(&self, feature: &[f64], logits: &[f64]) -> f64 {
        match self {
            DetectorState::Msp => logit::msp_score(logits),
            DetectorState::Mls => logit::mls_score(logits),
            DetectorState::GradNorm => gradnorm_score(feature, logits),
            DetectorState::Gen { gamma } => gen_score(logits, *gamma),
            DetectorState::Maha(s) => s.score(feature),
            DetectorState::React(s) => s.score(feature),
            DetectorState::Klm(s) => s.score(logits),
            DetectorState::Knn(s) => s.score(feature),
            DetectorState::Vim(s) => s.score(feature, logits),
        }
    }

    /// OOD scores for every sample of `batch`, higher = more OOD.
    pub fn score(&self, batch: &EmbeddingSet) -> Result<Vec<f64>, DetectorError> {
        self.check_batch(batch)?;
        let scores: Vec<f64> = (0..batch.n())
            .into_par_iter()
            .map(|i| self.score_sample(batch.feature(i), batch.logit(i)))
            .collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(DetectorError::NonFinite("scores"));
        }
        Ok(scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eds::{generate_synthetic, SyntheticSpec};

    fn synthetic(seed: u64) -> (EmbeddingSet, ModelHead) {
        generate_synthetic(&SyntheticSpec {
            classes: 3,
            dim: 6,
            per_class: 40,
            centroid_scale: 4.0,
            noise_scale: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn defaults_follow_size_rules() {
        let p = Hyperparams::default();
        assert_eq!(p.react_q, 98.0);
        assert_eq!(p.gen_gamma, 0.1);
        assert_eq!(p.resolve_knn_k(2), 5);
        assert_eq!(p.resolve_knn_k(3), 8);
        assert_eq!(p.resolve_knn_k(8), 20);
        assert_eq!(p.resolve_vim_dim(2048), 1024);
        assert_eq!(p.resolve_vim_dim(7), 4);
        assert_eq!(p.resolve_vim_dim(2), 1);
    }

    #[test]
    fn parse_list_round_trips_names() {
        let kinds = parse_detector_list("msp, maha,vim").unwrap();
        assert_eq!(kinds, vec![DetectorKind::Msp, DetectorKind::Maha, DetectorKind::Vim]);
        for k in DetectorKind::ALL {
            assert_eq!(k.name().parse::<DetectorKind>().unwrap(), k);
            assert_eq!(DetectorKind::from_tag(k.tag()), Some(k));
        }
        assert!(parse_detector_list("msp,odin").is_err());
    }

    #[test]
    fn head_bearing_detectors_require_a_head() {
        let (train, _) = synthetic(0);
        for kind in [DetectorKind::React, DetectorKind::Vim] {
            let err = fit(&DetectorSpec::new(kind), &train, None).unwrap_err();
            assert!(matches!(err, DetectorError::MissingHead(_)));
        }
    }

    #[test]
    fn maha_requires_labels() {
        let (train, _) = synthetic(0);
        let unlabeled = train.with_labels(None).unwrap();
        let err = fit(&DetectorSpec::new(DetectorKind::Maha), &unlabeled, None).unwrap_err();
        assert!(matches!(err, DetectorError::MissingLabels(_)));
    }

    #[test]
    fn gen_gamma_out_of_range_is_rejected() {
        let (train, _) = synthetic(0);
        let spec = DetectorSpec::with_params(
            DetectorKind::Gen,
            Hyperparams {
                gen_gamma: 1.0,
                ..Default::default()
            },
        );
        assert!(fit(&spec, &train, None).is_err());
    }

    #[test]
    fn batch_dimension_mismatch_is_an_error() {
        let (train, head) = synthetic(0);
        let other = generate_synthetic(&SyntheticSpec {
            classes: 3,
            dim: 5,
            per_class: 5,
            centroid_scale: 4.0,
            noise_scale: 1.0,
            seed: 1,
        })
        .unwrap()
        .0;
        for kind in [DetectorKind::Maha, DetectorKind::Knn, DetectorKind::Vim, DetectorKind::React] {
            let state = fit(&DetectorSpec::new(kind), &train, Some(&head)).unwrap();
            assert!(matches!(
                state.score(&other),
                Err(DetectorError::DimensionMismatch { .. })
            ));
        }
    }

    #[test]
    fn fit_and_score_are_deterministic() {
        let (train, head) = synthetic(5);
        let (test, _) = synthetic(6);
        for kind in DetectorKind::ALL {
            let a = fit(&DetectorSpec::new(kind), &train, Some(&head)).unwrap();
            let b = fit(&DetectorSpec::new(kind), &train, Some(&head)).unwrap();
            assert_eq!(a, b, "{kind}");
            let sa = a.score(&test).unwrap();
            let sb = b.score(&test).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&sa), bits(&sb), "{kind}");
        }
    }
}
