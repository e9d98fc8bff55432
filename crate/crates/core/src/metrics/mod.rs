//! Detection-quality metrics: AUROC for semantic OOD, prediction rejection
//! ratio for misclassification detection, and class-balanced accuracy.

mod accuracy;
mod auroc;
mod rejection;

pub use accuracy::balanced_accuracy;
pub use auroc::{auroc, auroc_from_scores, ScoredBinarySample};
pub use rejection::{prr, rejection_curve, PrrReport, RejectionCurve, TIE_DIAGNOSTIC_FRACTION};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
    #[error("class {0} has no samples")]
    EmptyClass(usize),
}
