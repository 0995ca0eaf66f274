//! Partition generators for the heterogeneity families and the sparsity sweep.
//!
//! Client train shards come from the dataset's train split and test shards
//! from its test split, passed through the same cluster transform. Within a
//! cluster both pools are shuffled and dealt round-robin, so shard sizes
//! differ by at most one and nothing is discarded.

mod build;
mod families;

pub use build::build_partition;
pub use families::{
    block_classes, label_permutations, partition_combined, partition_concept_permutation, partition_concept_semantic,
    partition_covariate_rotation, partition_covariate_subclass, partition_domain_shift,
    partition_label_shift, ROTATION_ORDER,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{DatasetError, Sample, SplitDataset};
use crate::stats::StatsVector;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("K = {k} exceeds the {classes} available classes")]
    TooManyClusters { k: usize, classes: usize },
    #[error("at most 4 rotation clusters are supported, got {0}")]
    TooManyRotations(usize),
    #[error("subclass sets overlap without being identical: {0:?} and {1:?}")]
    OverlappingSubclasses(Vec<usize>, Vec<usize>),
    #[error("concept rules disagree on output arity: {0} vs {1}")]
    ArityMismatch(usize, usize),
    #[error("datasets differ: {0}")]
    DatasetMismatch(String),
    #[error("cluster {cluster} has {available} {split} samples for {clients} clients")]
    TooFewSamples {
        cluster: usize,
        split: &'static str,
        available: usize,
        clients: usize,
    },
    #[error("invalid partition spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

pub type Result<T> = std::result::Result<T, PartitionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    E1,
    E2a,
    E2b,
    E3a,
    E3b,
    E4a,
    E4b,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::E1 => "E1",
            Self::E2a => "E2a",
            Self::E2b => "E2b",
            Self::E3a => "E3a",
            Self::E3b => "E3b",
            Self::E4a => "E4a",
            Self::E4b => "E4b",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self> {
        [Self::E1, Self::E2a, Self::E2b, Self::E3a, Self::E3b, Self::E4a, Self::E4b]
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PartitionError::Invalid(format!("unknown family {s:?}")))
    }
}

/// Clients per cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityLevel {
    Rich,
    Medium,
    Sparse,
    VerySparse,
    SuperSparse,
}

impl SparsityLevel {
    pub const ALL: [Self; 5] = [
        Self::Rich,
        Self::Medium,
        Self::Sparse,
        Self::VerySparse,
        Self::SuperSparse,
    ];

    pub fn clients_per_cluster(self) -> usize {
        match self {
            Self::Rich => 5,
            Self::Medium => 10,
            Self::Sparse => 25,
            Self::VerySparse => 50,
            Self::SuperSparse => 100,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rich => "rich",
            Self::Medium => "medium",
            Self::Sparse => "sparse",
            Self::VerySparse => "very_sparse",
            Self::SuperSparse => "super_sparse",
        }
    }
}

impl fmt::Display for SparsityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SparsityLevel {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| *c != '_' && *c != '-').collect();
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().replace('_', "").eq_ignore_ascii_case(&key))
            .ok_or_else(|| PartitionError::Invalid(format!("unknown sparsity level {s:?}")))
    }
}

/// The named sparsity table.
pub fn sparsity_levels() -> [(SparsityLevel, usize); 5] {
    SparsityLevel::ALL.map(|l| (l, l.clients_per_cluster()))
}

/// Relabeling rule for concept shift.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptRule {
    /// Odd labels map to 1, even to 0.
    Parity,
    /// Labels at or above the threshold map to 1.
    Threshold(usize),
    /// Explicit table indexed by original label.
    Map(Vec<usize>),
}

impl ConceptRule {
    pub fn apply(&self, y: usize) -> usize {
        match self {
            Self::Parity => y % 2,
            Self::Threshold(t) => usize::from(y >= *t),
            Self::Map(m) => m[y],
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Self::Parity | Self::Threshold(_) => 2,
            Self::Map(m) => m.iter().max().map_or(0, |v| v + 1),
        }
    }

    pub fn table(&self, classes: usize) -> Vec<usize> {
        (0..classes).map(|y| self.apply(y)).collect()
    }
}

/// What turns source samples into one cluster's data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterTransform {
    pub cluster_id: usize,
    /// Index into the partition's source datasets.
    pub source: usize,
    /// Source labels admitted into the cluster pool.
    pub classes: Vec<usize>,
    /// Counter-clockwise rotation in degrees.
    pub rotation: u32,
    /// Output label for each source label.
    pub label_map: Vec<usize>,
    /// Clusters with the same source, class set and pool key split that pool
    /// disjointly; different pool keys reuse the same images.
    pub pool_key: usize,
    pub concept: usize,
    pub covariate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub cluster_id: usize,
    pub concept_id: usize,
    pub covariate_id: usize,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Source-split indices of `train` and `test`.
    pub train_origin: Vec<usize>,
    pub test_origin: Vec<usize>,
    pub stats: Option<StatsVector>,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub family: Family,
    pub clusters: Vec<ClusterTransform>,
    pub shards: Vec<ClientShard>,
    pub class_count: usize,
    pub input_shape: Vec<usize>,
}

impl Partition {
    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_ids(&self) -> Vec<usize> {
        self.shards.iter().map(|s| s.cluster_id).collect()
    }
}

/// Serializable family choice with its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum PartitionSpec {
    E1 {
        k: usize,
    },
    E2a {
        k: usize,
        /// Source label to superclass; parity when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        superclass: Option<Vec<usize>>,
        /// Subclass set per cluster; block rule when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subclass_sets: Option<Vec<Vec<usize>>>,
    },
    E2b {
        k: usize,
    },
    E3a {
        #[serde(default = "default_concept_rules")]
        rules: Vec<ConceptRule>,
    },
    E3b {
        k: usize,
    },
    E4a,
    E4b {
        covariate_clusters: usize,
        #[serde(default = "default_concept_rules")]
        rules: Vec<ConceptRule>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subclass_sets: Option<Vec<Vec<usize>>>,
    },
}

pub fn default_concept_rules() -> Vec<ConceptRule> {
    vec![ConceptRule::Parity, ConceptRule::Threshold(5)]
}

impl PartitionSpec {
    pub fn family(&self) -> Family {
        match self {
            Self::E1 { .. } => Family::E1,
            Self::E2a { .. } => Family::E2a,
            Self::E2b { .. } => Family::E2b,
            Self::E3a { .. } => Family::E3a,
            Self::E3b { .. } => Family::E3b,
            Self::E4a => Family::E4a,
            Self::E4b { .. } => Family::E4b,
        }
    }

    /// Ground-truth cluster count.
    pub fn cluster_count(&self) -> usize {
        match self {
            Self::E1 { k } | Self::E2a { k, .. } | Self::E2b { k } | Self::E3b { k } => *k,
            Self::E3a { rules } => rules.len(),
            Self::E4a => 2,
            Self::E4b {
                covariate_clusters,
                rules,
                ..
            } => rules.len() * covariate_clusters,
        }
    }

    pub fn needs_second_dataset(&self) -> bool {
        matches!(self, Self::E4a)
    }

    pub fn partition(
        &self,
        data: &SplitDataset,
        second: Option<&SplitDataset>,
        clients_per_cluster: usize,
        seed: u64,
    ) -> Result<Partition> {
        match self {
            Self::E1 { k } => partition_label_shift(data, *k, clients_per_cluster, seed),
            Self::E2a {
                k,
                superclass,
                subclass_sets,
            } => {
                let c = data.class_count();
                let superclass = superclass.clone().unwrap_or_else(|| ConceptRule::Parity.table(c));
                let sets = match subclass_sets {
                    Some(s) => s.clone(),
                    None => block_classes(c, *k)?,
                };
                partition_covariate_subclass(data, &superclass, &sets, clients_per_cluster, seed)
            }
            Self::E2b { k } => partition_covariate_rotation(data, *k, clients_per_cluster, seed),
            Self::E3a { rules } => partition_concept_semantic(data, rules, clients_per_cluster, seed),
            Self::E3b { k } => partition_concept_permutation(data, *k, clients_per_cluster, seed),
            Self::E4a => {
                let b = second.ok_or_else(|| {
                    PartitionError::Invalid("E4a needs a second dataset".into())
                })?;
                partition_domain_shift(data, b, clients_per_cluster, seed)
            }
            Self::E4b {
                covariate_clusters,
                rules,
                subclass_sets,
            } => {
                let sets = match subclass_sets {
                    Some(s) => s.clone(),
                    None => block_classes(data.class_count(), *covariate_clusters)?,
                };
                partition_combined(data, rules, &sets, clients_per_cluster, seed)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparsity_table_is_strictly_increasing_in_clients() {
        let t = sparsity_levels();
        assert_eq!(t.map(|(_, n)| n), [5, 10, 25, 50, 100]);
        assert!(t.windows(2).all(|w| w[0].1 < w[1].1));
        // samples per client for a 30,000-image cluster pool
        let per_client: Vec<usize> = t.iter().map(|(_, n)| 30_000 / n).collect();
        assert_eq!(per_client, vec![6000, 3000, 1200, 600, 300]);
    }

    #[test]
    fn names_parse_both_ways() {
        for l in SparsityLevel::ALL {
            assert_eq!(l.as_str().parse::<SparsityLevel>().unwrap(), l);
        }
        assert_eq!("SuperSparse".parse::<SparsityLevel>().unwrap(), SparsityLevel::SuperSparse);
        assert_eq!("e4b".parse::<Family>().unwrap(), Family::E4b);
        assert!("E5".parse::<Family>().is_err());
    }

    #[test]
    fn concept_rules_label_digits() {
        assert_eq!(ConceptRule::Parity.table(10), vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        assert_eq!(ConceptRule::Threshold(5).table(10), vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        assert_eq!(ConceptRule::Map(vec![2, 0, 1]).arity(), 3);
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec = PartitionSpec::E4b {
            covariate_clusters: 3,
            rules: default_concept_rules(),
            subclass_sets: None,
        };
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<PartitionSpec>(&text).unwrap(), spec);
        assert_eq!(spec.cluster_count(), 6);
        let e1: PartitionSpec = toml::from_str("family = \"E1\"\nk = 5").unwrap();
        assert_eq!(e1, PartitionSpec::E1 { k: 5 });
    }
}
