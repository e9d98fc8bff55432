//! Detectors that read only the logit/probability space (plus the feature
//! norm for the gradient detector).

use crate::eds::EmbeddingSet;
use crate::numeric::{argmax, l1_norm, max_value, softmax, RowMatrix};

/// Floor applied to template probabilities before taking their log.
pub const KLM_FLOOR: f64 = 1e-12;

pub(crate) fn msp_score(logits: &[f64]) -> f64 {
    -max_value(&softmax(logits))
}

pub(crate) fn mls_score(logits: &[f64]) -> f64 {
    -max_value(logits)
}

/// Generalized entropy `Σ_i p_i^γ (1 − p_i)^γ` over all classes.
pub fn gen_score(logits: &[f64], gamma: f64) -> f64 {
    softmax(logits)
        .iter()
        .map(|&p| p.powf(gamma) * (1.0 - p).powf(gamma))
        .sum()
}

/// Negated L1 norm of the last-layer gradient of `KL(u ‖ softmax(W f + b))`
/// with respect to `W`.
///
/// The gradient is the outer product `(p − u) fᵀ`, whose entrywise L1 norm
/// factors as `‖p − u‖₁ · ‖f‖₁`.
pub fn gradnorm_score(feature: &[f64], logits: &[f64]) -> f64 {
    let p = softmax(logits);
    let uniform = 1.0 / p.len() as f64;
    let dev: f64 = p.iter().map(|v| (v - uniform).abs()).sum();
    -(dev * l1_norm(feature))
}

/// `KL(p ‖ template)` with `0·ln 0 = 0` and the template floored at [`KLM_FLOOR`].
pub fn kl_to_template(p: &[f64], template: &[f64]) -> f64 {
    p.iter()
        .zip(template)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &ti)| pi * (pi.ln() - ti.max(KLM_FLOOR).ln()))
        .sum()
}

/// Mean softmax vector per predicted class; never-predicted classes fall back
/// to their one-hot vector.
pub fn klm_templates(train: &EmbeddingSet) -> RowMatrix {
    let c = train.c();
    let mut sums = RowMatrix::zeros(c, c);
    let mut counts = vec![0usize; c];
    for logits in train.logits().iter_rows() {
        let k = argmax(logits);
        counts[k] += 1;
        for (s, p) in sums.row_mut(k).iter_mut().zip(softmax(logits)) {
            *s += p;
        }
    }
    for (k, &count) in counts.iter().enumerate() {
        let row = sums.row_mut(k);
        if count == 0 {
            row[k] = 1.0;
        } else {
            row.iter_mut().for_each(|v| *v /= count as f64);
        }
    }
    sums
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlmState {
    templates: RowMatrix,
}

impl KlmState {
    pub fn fit(train: &EmbeddingSet) -> Self {
        Self {
            templates: klm_templates(train),
        }
    }

    pub(crate) fn from_templates(templates: RowMatrix) -> Self {
        Self { templates }
    }

    pub fn templates(&self) -> &RowMatrix {
        &self.templates
    }

    pub fn classes(&self) -> usize {
        self.templates.rows()
    }

    pub fn score(&self, logits: &[f64]) -> f64 {
        let p = softmax(logits);
        self.templates
            .iter_rows()
            .map(|t| kl_to_template(&p, t))
            .fold(f64::INFINITY, f64::min)
    }
}
