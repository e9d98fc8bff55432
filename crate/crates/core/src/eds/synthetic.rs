//! Gaussian-cluster embedding generator used for tests, demos and the
//! synthetic end-to-end runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{EdsError, EmbeddingSet, ModelHead};
use crate::numeric::{dot, RowMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub centroid_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Unit directions for the class centroids: mutually orthogonal when
/// `classes <= dim`, otherwise spread out by best-of-64 rejection.
fn centroid_directions(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(classes);
    if classes <= dim {
        while dirs.len() < classes {
            let mut v = gaussian_vec(rng, dim);
            for u in &dirs {
                let proj = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                dirs.push(v);
            }
        }
    } else {
        for _ in 0..classes {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..64 {
                let mut v = gaussian_vec(rng, dim);
                normalize(&mut v);
                let gap = dirs
                    .iter()
                    .map(|u| v.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                    best = Some((gap, v));
                }
            }
            dirs.push(best.expect("at least one candidate").1);
        }
    }
    dirs
}

/// Draws `per_class` samples around each of `classes` centroids at radius
/// `centroid_scale`, with isotropic noise of standard deviation
/// `noise_scale`. Rows are ordered class by class and labeled.
///
/// The head is the nearest-centroid discriminant: `W` rows are the
/// centroids and `b_k = −‖μ_k‖²/2`, so stored logits equal `W·f + b`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(EmbeddingSet, ModelHead), EdsError> {
    if spec.classes < 2 {
        return Err(EdsError::Invariant("synthetic data needs at least 2 classes".into()));
    }
    if spec.dim < 1 || spec.per_class < 1 {
        return Err(EdsError::Invariant("dim and per_class must be >= 1".into()));
    }
    if !(spec.centroid_scale > 0.0 && spec.centroid_scale.is_finite())
        || !(spec.noise_scale > 0.0 && spec.noise_scale.is_finite())
    {
        return Err(EdsError::Invariant("scales must be positive and finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centroids: Vec<Vec<f64>> = centroid_directions(&mut rng, spec.classes, spec.dim)
        .into_iter()
        .map(|u| u.into_iter().map(|x| x * spec.centroid_scale).collect())
        .collect();
    let bias: Vec<f64> = centroids.iter().map(|m| -0.5 * dot(m, m)).collect();
    let head = ModelHead::new(RowMatrix::from_rows(&centroids), bias)?;

    let n = spec.classes * spec.per_class;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut logits = Vec::with_capacity(n * spec.classes);
    let mut labels = Vec::with_capacity(n);
    for (k, mu) in centroids.iter().enumerate() {
        for _ in 0..spec.per_class {
            let f: Vec<f64> = mu
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + spec.noise_scale * z
                })
                .collect();
            logits.extend(head.logits(&f));
            features.extend(f);
            labels.push(k as u32);
        }
    }
    let set = EmbeddingSet::new(
        RowMatrix::from_vec(n, spec.dim, features),
        RowMatrix::from_vec(n, spec.classes, logits),
        Some(labels),
        None,
    )?;
    Ok((set, head))
}

/// Draws a fresh labeled sample around the centroids of a head produced by
/// [`generate_synthetic`] (its `W` rows), e.g. a test set or a noisier
/// covariate-shifted set. Logits are `W·f + b` of that head.
pub fn sample_around_head(
    head: &ModelHead,
    per_class: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<EmbeddingSet, EdsError> {
    if per_class < 1 {
        return Err(EdsError::Invariant("per_class must be >= 1".into()));
    }
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(EdsError::Invariant("noise_scale must be finite and >= 0".into()));
    }
    let (c, d) = (head.c(), head.d());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c * per_class;
    let mut features = Vec::with_capacity(n * d);
    let mut logits = Vec::with_capacity(n * c);
    let mut labels = Vec::with_capacity(n);
    for k in 0..c {
        let mu = head.weight().row(k);
        for _ in 0..per_class {
            let f: Vec<f64> = mu
                .iter()
                .map(|m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + noise_scale * z
                })
                .collect();
            logits.extend(head.logits(&f));
            features.extend(f);
            labels.push(k as u32);
        }
    }
    EmbeddingSet::new(
        RowMatrix::from_vec(n, d, features),
        RowMatrix::from_vec(n, c, logits),
        Some(labels),
        None,
    )
}
