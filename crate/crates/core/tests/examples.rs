//! Worked examples checked against independent reference computations.

#![allow(clippy::needless_range_loop)]

mod common;

use oodkit::detectors::{fit, DetectorKind, DetectorSpec, MahaState};
use oodkit::eds::{generate_synthetic, EmbeddingSet, SyntheticSpec};
use oodkit::ensemble::{de_average, entropy, epistemic_uncertainty, total_uncertainty, EnsembleBatch};
use oodkit::metrics::balanced_accuracy;
use oodkit::numeric::{softmax, RowMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Double-double `exp(x)` for moderate `x`, from a Taylor series on `x/2^k`
/// with repeated squaring.
fn exp_dd(x: f64) -> (f64, f64) {
    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }
    fn mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        let p = a.0 * b.0;
        let e = a.0.mul_add(b.0, -p);
        two_sum(p, e + a.0 * b.1 + a.1 * b.0)
    }
    fn add(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
        let (s, e) = two_sum(a.0, b.0);
        two_sum(s, e + a.1 + b.1)
    }
    let k = 10;
    let r = (x / 1024.0, 0.0);
    let mut term = (1.0, 0.0);
    let mut sum = (1.0, 0.0);
    for i in 1..30 {
        term = mul(term, r);
        term = (term.0 / i as f64, term.1 / i as f64);
        sum = add(sum, term);
    }
    for _ in 0..k {
        sum = mul(sum, sum);
    }
    sum
}

#[test]
fn softmax_matches_extended_precision_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-20.0..20.0)).collect();
        let e: Vec<(f64, f64)> = z.iter().map(|&v| exp_dd(v)).collect();
        let total: f64 = e.iter().map(|p| p.0 + p.1).sum();
        let got = softmax(&z);
        for (g, p) in got.iter().zip(&e) {
            let want = (p.0 + p.1) / total;
            assert!((g - want).abs() <= 1e-12, "{g} vs {want}");
        }
        assert!((got.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn maha_recovers_two_centroids() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (k, cx) in [0.0, 10.0].into_iter().enumerate() {
        for _ in 0..500 {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![cx + a, b]);
            labels.push(k as u32);
        }
    }
    let state = MahaState::fit(&RowMatrix::from_rows(&rows), &labels).unwrap();
    for (k, cx) in [0.0, 10.0].into_iter().enumerate() {
        let mu = state.centroids().row(k);
        let dist = ((mu[0] - cx).powi(2) + mu[1].powi(2)).sqrt();
        assert!(dist < 0.5, "class {k} centroid off by {dist}");
    }
}

#[test]
fn synthetic_classes_are_linearly_separable() {
    let (set, head) = generate_synthetic(&SyntheticSpec {
        classes: 6,
        dim: 10,
        per_class: 200,
        centroid_scale: 10.0,
        noise_scale: 0.1,
        seed: 2,
    })
    .unwrap();
    // Fit a nearest-mean linear classifier on even rows, test on odd rows.
    let (c, d) = (set.c(), set.d());
    let mut means = vec![vec![0.0; d]; c];
    let mut counts = vec![0.0; c];
    let labels = set.labels().unwrap();
    for i in (0..set.n()).step_by(2) {
        let k = labels[i] as usize;
        for (m, f) in means[k].iter_mut().zip(set.feature(i)) {
            *m += f;
        }
        counts[k] += 1.0;
    }
    for (m, n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n);
    }
    let mut hits = 0;
    let mut total = 0;
    for i in (1..set.n()).step_by(2) {
        let f = set.feature(i);
        let scores: Vec<f64> = means
            .iter()
            .map(|m| m.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() - 0.5 * m.iter().map(|a| a * a).sum::<f64>())
            .collect();
        hits += (common::first_argmax(&scores) == labels[i] as usize) as usize;
        total += 1;
    }
    assert!(hits as f64 / total as f64 >= 0.99);
    assert_eq!(head.c(), 6);
}

fn random_batch(rng: &mut ChaCha8Rng, m: usize, n: usize, c: usize) -> Vec<Vec<Vec<f64>>> {
    (0..m)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let z: Vec<f64> = (0..c).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
                    common::softmax(&z)
                })
                .collect()
        })
        .collect()
}

#[test]
fn ensemble_matches_direct_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (m, n, c) = (4, 64, 5);
    let probs = random_batch(&mut rng, m, n, c);
    let batch = EnsembleBatch::new(probs.iter().map(|rows| RowMatrix::from_rows(rows)).collect()).unwrap();
    let (avg, preds) = de_average(&batch);
    let tu = total_uncertainty(&batch);
    let eu = epistemic_uncertainty(&batch);
    for i in 0..n {
        let mean: Vec<f64> = (0..c).map(|k| probs.iter().map(|p| p[i][k]).sum::<f64>() / m as f64).collect();
        for k in 0..c {
            assert!((avg.get(i, k) - mean[k]).abs() <= 1e-12);
        }
        assert_eq!(preds[i], common::first_argmax(&mean));
        let h = common::entropy(&mean);
        assert!((tu[i] - h).abs() <= 1e-12);
        assert!((entropy(&mean) - h).abs() <= 1e-12);
        let member_mean: f64 = probs.iter().map(|p| common::entropy(&p[i])).sum::<f64>() / m as f64;
        assert!((eu[i] - (h - member_mean).max(0.0)).abs() <= 1e-12);
    }
}

#[test]
fn one_hot_members_on_different_classes_give_full_entropy() {
    let members = vec![
        RowMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]),
        RowMatrix::from_rows(&[vec![0.0, 1.0, 0.0]]),
    ];
    let batch = EnsembleBatch::new(members).unwrap();
    let tu = total_uncertainty(&batch)[0];
    assert!((tu - 2f64.ln()).abs() <= 1e-15);
    assert_eq!(epistemic_uncertainty(&batch)[0], tu);
}

#[test]
fn uniform_average_reaches_ln_c() {
    let batch = EnsembleBatch::new(vec![RowMatrix::from_rows(&[vec![0.25; 4]])]).unwrap();
    assert!((total_uncertainty(&batch)[0] - 4f64.ln()).abs() <= 1e-15);
}

#[test]
fn balanced_accuracy_matches_tally_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let c = rng.random_range(2..7usize);
        let n = rng.random_range(c..200);
        let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let mut recall = 0.0;
        for k in 0..c {
            let total = labels.iter().filter(|&&y| y == k).count();
            let hit = labels.iter().zip(&preds).filter(|(&y, &p)| y == k && p == k).count();
            recall += hit as f64 / total as f64;
        }
        let want = 100.0 * recall / c as f64;
        let got = balanced_accuracy(&preds, &labels, Some(c)).unwrap();
        assert!((got - want).abs() <= 1e-12);
    }
}

#[test]
fn all_detectors_accept_two_classes_and_one_dimension() {
    let set = EmbeddingSet::new(
        RowMatrix::from_vec(6, 1, vec![1.0, 2.0, 3.0, -1.0, -2.0, -3.5]),
        RowMatrix::from_vec(6, 2, vec![1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.5]),
        Some(vec![0, 0, 0, 1, 1, 1]),
        None,
    )
    .unwrap();
    for kind in [
        DetectorKind::Msp,
        DetectorKind::Mls,
        DetectorKind::Gen,
        DetectorKind::GradNorm,
        DetectorKind::Maha,
        DetectorKind::Klm,
        DetectorKind::Knn,
    ] {
        let state = fit(&DetectorSpec::new(kind), &set, None).unwrap();
        let scores = state.score(&set).unwrap();
        assert!(scores.iter().all(|s| s.is_finite()), "{}", kind.name());
    }
}
