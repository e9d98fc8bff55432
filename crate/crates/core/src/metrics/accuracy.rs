use std::collections::BTreeMap;

use super::MetricError;

/// Mean per-class recall in percent.
///
/// Classes are those present in `labels`; with `num_classes = Some(c)` every
/// class in `0..c` must have at least one sample.
pub fn balanced_accuracy(
    predictions: &[usize],
    labels: &[usize],
    num_classes: Option<usize>,
) -> Result<f64, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(MetricError::Undefined("accuracy of an empty set"));
    }
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    if let Some(c) = num_classes {
        for k in 0..c {
            tally.insert(k, (0, 0));
        }
    }
    for (&p, &y) in predictions.iter().zip(labels) {
        let entry = tally.entry(y).or_insert((0, 0));
        entry.1 += 1;
        if p == y {
            entry.0 += 1;
        }
    }
    if let Some((&k, _)) = tally.iter().find(|(_, &(_, total))| total == 0) {
        return Err(MetricError::EmptyClass(k));
    }
    let recall_sum: f64 = tally
        .values()
        .map(|&(hit, total)| hit as f64 / total as f64)
        .sum();
    Ok(100.0 * recall_sum / tally.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        assert_eq!(balanced_accuracy(&[0, 1, 2], &[0, 1, 2], None).unwrap(), 100.0);
    }

    #[test]
    fn constant_prediction_on_balanced_binary() {
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 1, 0, 1], None).unwrap(), 50.0);
    }

    #[test]
    fn imbalance_is_averaged_per_class() {
        // class 0: 3/3, class 1: 0/1 → 50%
        assert_eq!(balanced_accuracy(&[0, 0, 0, 0], &[0, 0, 0, 1], None).unwrap(), 50.0);
    }

    #[test]
    fn declared_class_without_samples_is_an_error() {
        assert_eq!(
            balanced_accuracy(&[0, 1], &[0, 1], Some(3)),
            Err(MetricError::EmptyClass(2))
        );
    }
}
