//! Activation truncation followed by the energy score.

use super::DetectorError;
use crate::eds::{EmbeddingSet, ModelHead};
use crate::numeric::{logsumexp, percentile};

#[derive(Debug, Clone, PartialEq)]
pub struct ReactState {
    clamp: f64,
    head: ModelHead,
}

impl ReactState {
    /// The clamp is the `q`-th percentile of every train feature entry pooled
    /// into one distribution.
    pub fn fit(train: &EmbeddingSet, head: &ModelHead, q: f64) -> Result<Self, DetectorError> {
        if !(q > 0.0 && q <= 100.0) {
            return Err(DetectorError::InvalidHyperparameter(format!(
                "react percentile must lie in (0, 100], got {q}"
            )));
        }
        let mut pooled = train.features().as_slice().to_vec();
        let clamp = percentile(&mut pooled, q);
        Ok(Self {
            clamp,
            head: head.clone(),
        })
    }

    pub(crate) fn from_parts(clamp: f64, head: ModelHead) -> Self {
        Self { clamp, head }
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn head(&self) -> &ModelHead {
        &self.head
    }

    pub fn score(&self, feature: &[f64]) -> f64 {
        let truncated: Vec<f64> = feature.iter().map(|&x| x.min(self.clamp)).collect();
        -logsumexp(&self.head.logits(&truncated))
    }
}
