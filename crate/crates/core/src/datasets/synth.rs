use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, Result, Sample, SplitDataset};
use crate::seed;

/// How a synthetic cluster assigns labels to its points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum SynthLabelRule {
    /// Every point gets this label.
    Constant { label: usize },
    /// `1` if coordinate `index` is positive, else `0`; reversed when `flip`.
    Sign { index: usize, flip: bool },
}

impl SynthLabelRule {
    fn label(&self, x: &[f64]) -> usize {
        match *self {
            Self::Constant { label } => label,
            Self::Sign { index, flip } => usize::from((x[index] > 0.0) != flip),
        }
    }

    fn arity(&self) -> usize {
        match *self {
            Self::Constant { label } => label + 1,
            Self::Sign { .. } => 2,
        }
    }
}

/// An isotropic Gaussian `N(mean, scale^2 I)` with a labeling rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCluster {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub rule: SynthLabelRule,
}

/// Draws `n_per_cluster` points from each cluster. Returns the dataset and
/// the generating cluster of every sample.
pub fn synth_clusters(
    clusters: &[SynthCluster],
    n_per_cluster: usize,
    synth_seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    let first = clusters
        .first()
        .ok_or_else(|| DatasetError::Invalid("at least one cluster is required".into()))?;
    let dim = first.mean.len();
    let mut classes = 0;
    for c in clusters {
        if c.mean.len() != dim {
            return Err(DatasetError::Invalid(format!(
                "cluster dims disagree: {} vs {dim}",
                c.mean.len()
            )));
        }
        if !(c.scale > 0.0) {
            return Err(DatasetError::DegenerateScale(c.scale));
        }
        if let SynthLabelRule::Sign { index, .. } = c.rule {
            if index >= dim {
                return Err(DatasetError::Invalid(format!("sign index {index} >= dim {dim}")));
            }
        }
        classes = classes.max(c.rule.arity());
    }
    let mut samples = Vec::with_capacity(clusters.len() * n_per_cluster);
    let mut ids = Vec::with_capacity(samples.capacity());
    for (k, c) in clusters.iter().enumerate() {
        let mut rng = seed::stream(synth_seed, &[seed::tag::SYNTH, k as u64]);
        for _ in 0..n_per_cluster {
            let x: Vec<f64> = c
                .mean
                .iter()
                .map(|m| m + c.scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let y = c.rule.label(&x);
            samples.push(Sample { x, y });
            ids.push(k);
        }
    }
    Ok((Dataset::new("synthetic", samples, classes, vec![dim])?, ids))
}

/// A `classes`-class dataset with one Gaussian blob per class, means drawn
/// uniformly from `[-1, 1]^dim`. Train and test come from the same blobs.
pub fn synthetic_classes(
    classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    scale: f64,
    synth_seed: u64,
) -> Result<SplitDataset> {
    let mut rng = seed::stream(synth_seed, &[seed::tag::SYNTH, u64::MAX]);
    let clusters: Vec<SynthCluster> = (0..classes)
        .map(|label| SynthCluster {
            mean: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            scale,
            rule: SynthLabelRule::Constant { label },
        })
        .collect();
    let (train, _) = synth_clusters(&clusters, train_per_class, seed::derive(synth_seed, &[0]))?;
    let (test, _) = synth_clusters(&clusters, test_per_class, seed::derive(synth_seed, &[1]))?;
    SplitDataset::new(train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cluster(mean: Vec<f64>, rule: SynthLabelRule) -> SynthCluster {
        SynthCluster { mean, scale: 0.5, rule }
    }

    #[test]
    fn disjoint_label_sets_build_label_shift() {
        let specs = vec![
            cluster(vec![-2.0, 0.0], SynthLabelRule::Constant { label: 0 }),
            cluster(vec![-2.0, 1.0], SynthLabelRule::Constant { label: 1 }),
            cluster(vec![2.0, 0.0], SynthLabelRule::Constant { label: 2 }),
            cluster(vec![2.0, 1.0], SynthLabelRule::Constant { label: 3 }),
        ];
        let (d, ids) = synth_clusters(&specs, 20, 3).unwrap();
        assert_eq!(d.class_count, 4);
        assert_eq!(d.len(), 80);
        for (s, k) in d.samples.iter().zip(&ids) {
            assert_eq!(s.y, *k);
        }
    }

    #[test]
    fn opposite_sign_rules_build_concept_shift() {
        let specs = vec![
            cluster(vec![0.0, 0.0], SynthLabelRule::Sign { index: 0, flip: false }),
            cluster(vec![0.0, 0.0], SynthLabelRule::Sign { index: 0, flip: true }),
        ];
        let (d, ids) = synth_clusters(&specs, 50, 9).unwrap();
        for (s, k) in d.samples.iter().zip(&ids) {
            let positive = s.x[0] > 0.0;
            assert_eq!(s.y == 1, positive == (*k == 0));
        }
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let specs = vec![cluster(vec![1.0; 3], SynthLabelRule::Constant { label: 0 })];
        assert_eq!(synth_clusters(&specs, 10, 5).unwrap(), synth_clusters(&specs, 10, 5).unwrap());
        assert_ne!(synth_clusters(&specs, 10, 5).unwrap().0, synth_clusters(&specs, 10, 6).unwrap().0);
    }

    #[test]
    fn degenerate_scale_is_rejected() {
        let mut c = cluster(vec![0.0], SynthLabelRule::Constant { label: 0 });
        c.scale = 0.0;
        assert!(matches!(synth_clusters(&[c], 1, 0), Err(DatasetError::DegenerateScale(_))));
        assert!(synth_clusters(&[], 1, 0).is_err());
    }
}
