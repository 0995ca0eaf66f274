//! Client fingerprints: top-l eigenvalues of the covariance of `[φ(x) ‖ onehot(y)]`.
//!
//! Columns are mean-centered, the covariance divisor is `n - 1` (a single
//! sample yields all zeros), eigenvalues are not normalized, and vectors are
//! zero-padded to length `l` when the rank is smaller.

mod pca;

pub use pca::{covariance_spectrum, PcaSolver};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{FeatureExtractor, Sample};

pub const DEFAULT_STATS_DIM: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("cannot fingerprint an empty shard")]
    EmptyShard,
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("feature extractor produced {actual} values, expected {expected}")]
    FeatureWidth { expected: usize, actual: usize },
    #[error("stats dimension must be at least 1")]
    ZeroDim,
    #[error("matrix data has {actual} values, expected {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        actual: usize,
    },
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Row-major `n x (feature_dim + class_count)` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMatrix {
    pub rows: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub data: Vec<f64>,
}

impl AugmentedMatrix {
    pub fn cols(&self) -> usize {
        self.feature_dim + self.class_count
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.cols();
        &self.data[r * d..(r + 1) * d]
    }
}

/// Eigenvalue fingerprint, nonincreasing and nonnegative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StatsVector {
    values: Vec<f64>,
}

impl StatsVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn l(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn build_augmented(
    samples: &[Sample],
    extractor: &FeatureExtractor,
    class_count: usize,
) -> Result<AugmentedMatrix> {
    if samples.is_empty() {
        return Err(StatsError::EmptyShard);
    }
    let fd = extractor.output_dim;
    let d = fd + class_count;
    let mut data = vec![0.0; samples.len() * d];
    for (row, s) in data.chunks_exact_mut(d).zip(samples) {
        if s.y >= class_count {
            return Err(StatsError::LabelOutOfRange {
                label: s.y,
                classes: class_count,
            });
        }
        let features = extractor.extract(&s.x);
        if features.len() != fd {
            return Err(StatsError::FeatureWidth {
                expected: fd,
                actual: features.len(),
            });
        }
        row[..fd].copy_from_slice(&features);
        row[fd + s.y] = 1.0;
    }
    Ok(AugmentedMatrix {
        rows: samples.len(),
        feature_dim: fd,
        class_count,
        data,
    })
}

/// Top-`l` covariance eigenvalues of `z` using the iterative solver.
pub fn pca_eigenvalues(z: &AugmentedMatrix, l: usize) -> Result<StatsVector> {
    pca_eigenvalues_with(z, l, PcaSolver::Iterative)
}

pub fn pca_eigenvalues_with(z: &AugmentedMatrix, l: usize, solver: PcaSolver) -> Result<StatsVector> {
    covariance_spectrum(&z.data, z.rows, z.cols(), l, solver).map(StatsVector::new)
}

pub fn fingerprint_client(
    train: &[Sample],
    extractor: &FeatureExtractor,
    class_count: usize,
    l: usize,
) -> Result<StatsVector> {
    pca_eigenvalues(&build_augmented(train, extractor, class_count)?, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: Vec<f64>, y: usize) -> Sample {
        Sample { x, y }
    }

    #[test]
    fn augmented_row_is_features_then_onehot() {
        let z = build_augmented(&[s(vec![0.25, 0.5], 1)], &FeatureExtractor::identity(2), 2).unwrap();
        assert_eq!(z.cols(), 4);
        assert_eq!(z.row(0), &[0.25, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn mnist_width_is_794() {
        let z = build_augmented(&[s(vec![0.0; 784], 3)], &FeatureExtractor::identity(784), 10).unwrap();
        assert_eq!(z.cols(), 794);
    }

    #[test]
    fn single_class_shard_has_one_constant_label_column() {
        let rows: Vec<_> = (0..5).map(|i| s(vec![i as f64], 2)).collect();
        let z = build_augmented(&rows, &FeatureExtractor::identity(1), 4).unwrap();
        for r in 0..5 {
            assert_eq!(&z.row(r)[1..], &[0.0, 0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn build_errors() {
        let fx = FeatureExtractor::identity(1);
        assert_eq!(build_augmented(&[], &fx, 2), Err(StatsError::EmptyShard));
        assert!(matches!(
            build_augmented(&[s(vec![0.0], 2)], &fx, 2),
            Err(StatsError::LabelOutOfRange { .. })
        ));
        assert!(matches!(
            build_augmented(&[s(vec![0.0, 1.0], 0)], &fx, 2),
            Err(StatsError::FeatureWidth { .. })
        ));
    }

    #[test]
    fn identical_shards_identical_fingerprints() {
        let rows: Vec<_> = (0..30).map(|i| s(vec![(i % 7) as f64, (i * i % 5) as f64], i % 3)).collect();
        let fx = FeatureExtractor::identity(2);
        let a = fingerprint_client(&rows, &fx, 3, 4).unwrap();
        assert_eq!(a, fingerprint_client(&rows.clone(), &fx, 3, 4).unwrap());
        assert_eq!(a.l(), 4);
    }
}
