use serde::{Deserialize, Serialize};

use super::MetricError;

/// One scored sample; `positive` marks the OOD (or misclassified) side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBinarySample {
    pub score: f64,
    pub positive: bool,
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// positive/negative pairs where the positive scores higher, ties counting ½.
///
/// Sorts once and assigns midranks to tied groups, so the cost is O(N log N).
pub fn auroc(samples: &[ScoredBinarySample]) -> Result<f64, MetricError> {
    if let Some(i) = samples.iter().position(|s| !s.score.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let positives = samples.iter().filter(|s| s.positive).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::Undefined("auroc needs both positives and negatives"));
    }

    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));

    // sum of 1-based midranks over positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let value = samples[order[start]].score;
        let mut end = start + 1;
        while end < order.len() && samples[order[end]].score == value {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| samples[i].positive).count();
        rank_sum += midrank * pos_in_group as f64;
        start = end;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// AUROC with `positives` as the OOD side.
pub fn auroc_from_scores(positives: &[f64], negatives: &[f64]) -> Result<f64, MetricError> {
    let samples: Vec<ScoredBinarySample> = positives
        .iter()
        .map(|&score| ScoredBinarySample {
            score,
            positive: true,
        })
        .chain(negatives.iter().map(|&score| ScoredBinarySample {
            score,
            positive: false,
        }))
        .collect();
    auroc(&samples)
}
