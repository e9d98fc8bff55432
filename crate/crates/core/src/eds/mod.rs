//! Embedding dumps: the in-memory [`EmbeddingSet`] and [`ModelHead`], their
//! binary file formats, dataset manifests and a synthetic generator.

mod format;
mod manifest;
mod synthetic;

pub use format::{
    eds_size, head_size, read_eds, read_eds_file, read_head, read_head_file, write_eds,
    write_eds_file, write_head, write_head_file, EDS_MAGIC, HEAD_MAGIC,
};
pub use manifest::{DatasetManifest, LoadedDataset, MemberDumps};
pub use synthetic::{generate_synthetic, sample_around_head, SyntheticSpec};

use crate::numeric::RowMatrix;

#[derive(Debug, thiserror::Error)]
pub enum EdsError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("truncated stream: need {expected} bytes, got {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("size mismatch: header implies {expected} bytes, stream has {actual}")]
    SizeMismatch { expected: u64, actual: u64 },
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

/// N samples of (feature, logit, optional label, optional group).
///
/// Immutable after construction; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    features: RowMatrix,
    logits: RowMatrix,
    labels: Option<Vec<u32>>,
    groups: Option<Vec<i32>>,
}

impl EmbeddingSet {
    /// Validates and wraps the fields. An empty set (n = 0) is allowed in
    /// memory, e.g. after row filtering, but cannot be written to disk.
    pub fn new(
        features: RowMatrix,
        logits: RowMatrix,
        labels: Option<Vec<u32>>,
        groups: Option<Vec<i32>>,
    ) -> Result<Self, EdsError> {
        let n = features.rows();
        if logits.rows() != n {
            return Err(EdsError::Invariant(format!(
                "features have {n} rows but logits have {}",
                logits.rows()
            )));
        }
        if features.cols() < 1 {
            return Err(EdsError::Invariant("feature dimension must be >= 1".into()));
        }
        if logits.cols() < 2 {
            return Err(EdsError::Invariant("class count must be >= 2".into()));
        }
        if !features.all_finite() {
            return Err(EdsError::NonFinite("features"));
        }
        if !logits.all_finite() {
            return Err(EdsError::NonFinite("logits"));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(EdsError::Invariant(format!("{} labels for {n} samples", l.len())));
            }
            if l.iter().any(|&v| v > i32::MAX as u32) {
                return Err(EdsError::Invariant("label exceeds i32 range".into()));
            }
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(EdsError::Invariant(format!("{} groups for {n} samples", g.len())));
            }
        }
        Ok(Self {
            features,
            logits,
            labels,
            groups,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn c(&self) -> usize {
        self.logits.cols()
    }

    pub fn features(&self) -> &RowMatrix {
        &self.features
    }

    pub fn logits(&self) -> &RowMatrix {
        &self.logits
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn groups(&self) -> Option<&[i32]> {
        self.groups.as_deref()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn logit(&self, i: usize) -> &[f64] {
        self.logits.row(i)
    }

    /// Predicted class per sample (argmax of logits, lowest index on ties).
    pub fn predictions(&self) -> Vec<usize> {
        self.logits.iter_rows().map(crate::numeric::argmax).collect()
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            logits: self.logits.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
        }
    }

    /// Same samples with labels replaced.
    pub fn with_labels(&self, labels: Option<Vec<u32>>) -> Result<Self, EdsError> {
        Self::new(
            self.features.clone(),
            self.logits.clone(),
            labels,
            self.groups.clone(),
        )
    }

    /// Same samples with logits recomputed as `W·f + b` from `head`.
    pub fn with_head_logits(&self, head: &ModelHead) -> Result<Self, EdsError> {
        if head.d() != self.d() {
            return Err(EdsError::Invariant(format!(
                "head expects d={} but set has d={}",
                head.d(),
                self.d()
            )));
        }
        let rows: Vec<Vec<f64>> = self.features.iter_rows().map(|f| head.logits(f)).collect();
        Self::new(
            self.features.clone(),
            RowMatrix::from_rows(&rows),
            self.labels.clone(),
            self.groups.clone(),
        )
    }

    /// Concatenates sets with matching d and c. Labels and groups survive only
    /// when every part carries them.
    pub fn concat(parts: &[&EmbeddingSet]) -> Result<Self, EdsError> {
        let first = parts
            .first()
            .ok_or_else(|| EdsError::Invariant("nothing to concatenate".into()))?;
        let (d, c) = (first.d(), first.c());
        let mut f = Vec::new();
        let mut l = Vec::new();
        let mut labels = Some(Vec::new());
        let mut groups = Some(Vec::new());
        for p in parts {
            if p.d() != d || p.c() != c {
                return Err(EdsError::Invariant("concatenated sets disagree on d or c".into()));
            }
            f.extend_from_slice(p.features.as_slice());
            l.extend_from_slice(p.logits.as_slice());
            labels = match (labels, p.labels()) {
                (Some(mut acc), Some(x)) => {
                    acc.extend_from_slice(x);
                    Some(acc)
                }
                _ => None,
            };
            groups = match (groups, p.groups()) {
                (Some(mut acc), Some(x)) => {
                    acc.extend_from_slice(x);
                    Some(acc)
                }
                _ => None,
            };
        }
        let n = f.len() / d;
        Self::new(
            RowMatrix::from_vec(n, d, f),
            RowMatrix::from_vec(n, c, l),
            labels,
            groups,
        )
    }
}

/// Last linear layer of a classifier: `logits = W·f + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelHead {
    weight: RowMatrix,
    bias: Vec<f64>,
}

impl ModelHead {
    pub fn new(weight: RowMatrix, bias: Vec<f64>) -> Result<Self, EdsError> {
        if weight.rows() < 1 || weight.cols() < 1 {
            return Err(EdsError::Invariant("head weight must be non-empty".into()));
        }
        if bias.len() != weight.rows() {
            return Err(EdsError::Invariant(format!(
                "bias has {} entries for {} classes",
                bias.len(),
                weight.rows()
            )));
        }
        if !weight.all_finite() {
            return Err(EdsError::NonFinite("head weight"));
        }
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(EdsError::NonFinite("head bias"));
        }
        Ok(Self { weight, bias })
    }

    pub fn c(&self) -> usize {
        self.weight.rows()
    }

    pub fn d(&self) -> usize {
        self.weight.cols()
    }

    pub fn weight(&self) -> &RowMatrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let mut out = self.weight.mul_vec(feature);
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        out
    }

    /// Head restricted to the given class rows, in order.
    pub fn select_classes(&self, classes: &[usize]) -> Result<Self, EdsError> {
        if classes.iter().any(|&k| k >= self.c()) {
            return Err(EdsError::Invariant("class index out of range for head".into()));
        }
        Self::new(
            self.weight.select_rows(classes),
            classes.iter().map(|&k| self.bias[k]).collect(),
        )
    }

    /// Every coefficient multiplied by `factor` (a temperature change).
    pub fn scaled(&self, factor: f64) -> Result<Self, EdsError> {
        Self::new(
            RowMatrix::from_vec(
                self.c(),
                self.d(),
                self.weight.as_slice().iter().map(|v| v * factor).collect(),
            ),
            self.bias.iter().map(|v| v * factor).collect(),
        )
    }

    /// Largest |stored logit − (W·f + b)| over the set.
    pub fn max_logit_discrepancy(&self, set: &EmbeddingSet) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..set.n() {
            let recomputed = self.logits(set.feature(i));
            for (a, b) in recomputed.iter().zip(set.logit(i)) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }
}
