mod common;

use common::{covariance, jacobi_eigenvalues, rng};
use fedcond::datasets::{FeatureExtractor, Sample};
use fedcond::stats::{
    build_augmented, covariance_spectrum, fingerprint_client, pca_eigenvalues, PcaSolver,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn close(a: f64, b: f64, lead: f64) -> bool {
    (a - b).abs() <= 1e-6 * b.abs() + 1e-12 * lead
}

/// Rows with uneven column scales and a random rank cap.
fn random_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let rank = r.gen_range(1..=d);
    let basis: Vec<Vec<f64>> = (0..rank)
        .map(|k| (0..d).map(|_| r.gen_range(-1.0..1.0) / (1.0 + k as f64)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let mut row = vec![0.0; d];
            for b in &basis {
                let c: f64 = r.gen_range(-1.0..1.0);
                for (x, v) in row.iter_mut().zip(b) {
                    *x += c * v;
                }
            }
            row
        })
        .collect()
}

#[test]
fn iterative_matches_jacobi_oracle_on_100_matrices() {
    for case in 0..100u64 {
        let mut r = rng(1000 + case);
        let n = r.gen_range(2..=200);
        let d = r.gen_range(1..=50);
        let l = r.gen_range(1..=32);
        let rows = random_rows(case, n, d);
        let flat: Vec<f64> = rows.concat();
        let (cov, _) = covariance(&rows);
        let oracle = jacobi_eigenvalues(&cov, d);
        let lead = oracle[0].max(0.0);
        for solver in [PcaSolver::Iterative, PcaSolver::Dense] {
            let got = covariance_spectrum(&flat, n, d, l, solver).unwrap();
            assert_eq!(got.len(), l);
            for (j, &g) in got.iter().enumerate() {
                let want = oracle.get(j).copied().unwrap_or(0.0).max(0.0);
                assert!(
                    close(g, want, lead),
                    "case {case} ({n}x{d}, l={l}, {solver:?}) eig {j}: {g} vs {want}"
                );
            }
        }
    }
}

#[test]
fn fifty_by_twenty_top_eight() {
    let rows = random_rows(77, 50, 20);
    let (cov, d) = covariance(&rows);
    let oracle = jacobi_eigenvalues(&cov, d);
    let got = covariance_spectrum(&rows.concat(), 50, 20, 8, PcaSolver::Iterative).unwrap();
    for j in 0..8 {
        assert!(close(got[j], oracle[j], oracle[0]));
    }
}

fn random_orthogonal(seed: u64, d: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
        for _ in 0..2 {
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn spectrum_is_sorted_nonnegative_and_sums_to_total_variance(seed in 0u64..10_000, n in 2usize..60, d in 1usize..12) {
        let rows = random_rows(seed, n, d);
        let got = covariance_spectrum(&rows.concat(), n, d, d, PcaSolver::Iterative).unwrap();
        prop_assert!(got.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(got.iter().all(|&v| v >= 0.0));
        let (cov, _) = covariance(&rows);
        let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        let sum: f64 = got.iter().sum();
        prop_assert!((sum - trace).abs() <= 1e-9 * trace.max(1e-300), "{} vs {}", sum, trace);
    }

    #[test]
    fn orthogonal_transform_of_all_columns_preserves_spectrum(seed in 0u64..10_000, n in 2usize..40, d in 1usize..10) {
        let rows = random_rows(seed, n, d);
        let q = random_orthogonal(seed ^ 0xABCD, d);
        let turned: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| q.iter().map(|qc| qc.iter().zip(r).map(|(a, b)| a * b).sum()).collect())
            .collect();
        let a = covariance_spectrum(&rows.concat(), n, d, d, PcaSolver::Iterative).unwrap();
        let b = covariance_spectrum(&turned.concat(), n, d, d, PcaSolver::Iterative).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * a[0].max(1e-300));
        }
    }

    #[test]
    fn row_order_never_matters(seed in 0u64..10_000, n in 2usize..50, d in 1usize..10) {
        let mut rows = random_rows(seed, n, d);
        let a = covariance_spectrum(&rows.concat(), n, d, 6, PcaSolver::Iterative).unwrap();
        rows.shuffle(&mut rng(seed + 1));
        let b = covariance_spectrum(&rows.concat(), n, d, 6, PcaSolver::Iterative).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * a[0].max(1e-300));
        }
    }
}

fn shard(seed: u64, n: usize) -> Vec<Sample> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| Sample {
            x: (0..6).map(|_| r.gen::<f64>()).collect(),
            y: r.gen_range(0..3),
        })
        .collect()
}

#[test]
fn duplicated_shard_rescales_by_divisor_ratio_only() {
    let fx = FeatureExtractor::identity(6);
    let base = shard(5, 40);
    let doubled: Vec<Sample> = base.iter().chain(&base).cloned().collect();
    let a = fingerprint_client(&base, &fx, 3, 9).unwrap();
    let b = fingerprint_client(&doubled, &fx, 3, 9).unwrap();
    // same population covariance; the n-1 divisor contributes 2(n-1)/(2n-1)
    let n = base.len() as f64;
    let ratio = 2.0 * (n - 1.0) / (2.0 * n - 1.0);
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x * ratio - y).abs() <= 1e-10 * a.as_slice()[0]);
    }
}

#[test]
fn rank_deficient_shard_pads_with_exact_zeros() {
    let fx = FeatureExtractor::identity(6);
    let z = build_augmented(&shard(9, 4), &fx, 3).unwrap();
    let s = pca_eigenvalues(&z, 32).unwrap();
    assert_eq!(s.l(), 32);
    assert!(s.as_slice()[..3].iter().all(|&v| v > 0.0));
    assert!(s.as_slice()[3..].iter().all(|&v| v == 0.0));
}

#[test]
fn relabeling_by_permutation_keeps_the_spectrum() {
    let fx = FeatureExtractor::identity(6);
    let base = shard(13, 50);
    let perm = [2, 0, 1];
    let moved: Vec<Sample> = base.iter().map(|s| Sample { x: s.x.clone(), y: perm[s.y] }).collect();
    let a = fingerprint_client(&base, &fx, 3, 9).unwrap();
    let b = fingerprint_client(&moved, &fx, 3, 9).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() <= 1e-12 * a.as_slice()[0]);
    }
}
