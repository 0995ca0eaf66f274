//! Dataset ingestion and synthetic substrates.
//!
//! Image pixels are scaled by 1/255 into [0, 1]; no mean/std standardization
//! is applied anywhere. Synthetic Gaussian datasets are unconstrained reals.

mod idx;
mod rotate;
mod synth;

pub use idx::{load_idx, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use rotate::rotate_image;
pub use synth::{synth_clusters, synthetic_classes, SynthCluster, SynthLabelRule};

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated, header promises {expected} bytes but file has {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("rotation angle {0} is not a multiple of 90 in [0, 360)")]
    BadAngle(u32),
    #[error("rotation needs a square image, got {0:?}")]
    NotSquare(Vec<usize>),
    #[error("covariance scale must be > 0, got {0}")]
    DegenerateScale(f64),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// One input vector and its integer label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Sample>,
    pub class_count: usize,
    pub input_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        samples: Vec<Sample>,
        class_count: usize,
        input_shape: Vec<usize>,
    ) -> Result<Self> {
        let width: usize = input_shape.iter().product();
        if let Some(bad) = samples.iter().find(|s| s.x.len() != width) {
            return Err(DatasetError::Invalid(format!(
                "sample has {} values, input shape {input_shape:?} needs {width}",
                bad.x.len()
            )));
        }
        if let Some(bad) = samples.iter().find(|s| s.y >= class_count) {
            return Err(DatasetError::Invalid(format!(
                "label {} outside {class_count} classes",
                bad.y
            )));
        }
        Ok(Self {
            name: name.into(),
            samples,
            class_count,
            input_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.samples {
            counts[s.y] += 1;
        }
        counts
    }

    /// Keeps at most `max` samples of each class, chosen uniformly at random.
    /// Surviving samples keep their original relative order.
    pub fn cap_per_class(&self, max: usize, cap_seed: u64) -> Self {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            by_class.entry(s.y).or_default().push(i);
        }
        let mut keep = Vec::new();
        for (class, mut idx) in by_class {
            if idx.len() > max {
                idx.shuffle(&mut seed::stream(cap_seed, &[seed::tag::SUBSAMPLE, class as u64]));
                idx.truncate(max);
            }
            keep.extend(idx);
        }
        keep.sort_unstable();
        Self {
            name: self.name.clone(),
            samples: keep.into_iter().map(|i| self.samples[i].clone()).collect(),
            class_count: self.class_count,
            input_shape: self.input_shape.clone(),
        }
    }
}

/// A dataset's official train and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if train.input_shape != test.input_shape {
            return Err(DatasetError::Invalid(format!(
                "train shape {:?} differs from test shape {:?}",
                train.input_shape, test.input_shape
            )));
        }
        let classes = train.class_count.max(test.class_count);
        let (mut train, mut test) = (train, test);
        train.class_count = classes;
        test.class_count = classes;
        Ok(Self { train, test })
    }

    /// Loads `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
    /// `t10k-images-idx3-ubyte` and `t10k-labels-idx1-ubyte` from `dir`.
    pub fn from_idx_dir(dir: &Path, name: &str) -> Result<Self> {
        let mut train = load_idx(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
        )?;
        let mut test = load_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
        )?;
        train.name = name.to_string();
        test.name = name.to_string();
        Self::new(train, test)
    }

    pub fn name(&self) -> &str {
        &self.train.name
    }

    pub fn class_count(&self) -> usize {
        self.train.class_count
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.train.input_shape
    }

    pub fn cap_per_class(&self, max: usize, cap_seed: u64) -> Self {
        Self {
            train: self.train.cap_per_class(max, seed::derive(cap_seed, &[0])),
            test: self.test.cap_per_class(max, seed::derive(cap_seed, &[1])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    /// Flattened inputs, unchanged.
    #[default]
    Identity,
}

/// Maps an input to the feature vector used for client statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureExtractor {
    pub kind: ExtractorKind,
    pub output_dim: usize,
}

impl FeatureExtractor {
    pub fn identity(input_dim: usize) -> Self {
        Self {
            kind: ExtractorKind::Identity,
            output_dim: input_dim,
        }
    }

    pub fn for_kind(kind: ExtractorKind, input_dim: usize) -> Self {
        match kind {
            ExtractorKind::Identity => Self::identity(input_dim),
        }
    }

    pub fn extract<'a>(&self, x: &'a [f64]) -> Cow<'a, [f64]> {
        match self.kind {
            ExtractorKind::Identity => Cow::Borrowed(x),
        }
    }
}
