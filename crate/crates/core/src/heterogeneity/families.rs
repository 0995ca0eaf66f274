use std::collections::HashSet;

use rand::seq::SliceRandom;

use super::{build_partition, ClusterTransform, ConceptRule, Family, Partition, PartitionError, Result};
use crate::datasets::SplitDataset;
use crate::seed;

/// Rotation angle per cluster index.
pub const ROTATION_ORDER: [u32; 4] = [0, 180, 90, 270];

/// Contiguous class blocks; leading blocks absorb the remainder.
pub fn block_classes(classes: usize, k: usize) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(PartitionError::Invalid("K must be >= 1".into()));
    }
    if k > classes {
        return Err(PartitionError::TooManyClusters { k, classes });
    }
    let (base, rem) = (classes / k, classes % k);
    let mut start = 0;
    Ok((0..k)
        .map(|i| {
            let len = base + usize::from(i < rem);
            let block = (start..start + len).collect();
            start += len;
            block
        })
        .collect())
}

fn identity(classes: usize) -> Vec<usize> {
    (0..classes).collect()
}

fn plain(cluster_id: usize, classes: Vec<usize>, label_map: Vec<usize>) -> ClusterTransform {
    ClusterTransform {
        cluster_id,
        source: 0,
        classes,
        rotation: 0,
        label_map,
        pool_key: 0,
        concept: 0,
        covariate: cluster_id,
    }
}

/// E1: cluster `k` holds the `k`-th contiguous block of classes.
pub fn partition_label_shift(
    data: &SplitDataset,
    k: usize,
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    let c = data.class_count();
    let clusters = block_classes(c, k)?
        .into_iter()
        .enumerate()
        .map(|(i, set)| plain(i, set, identity(c)))
        .collect();
    build_partition(Family::E1, &[data], clusters, c, clients_per_cluster, part_seed)
}

/// E2a: every cluster predicts `superclass[y]` but sees only its subclasses.
/// Identical subclass sets split their pool; partial overlaps are rejected.
pub fn partition_covariate_subclass(
    data: &SplitDataset,
    superclass: &[usize],
    subclass_sets: &[Vec<usize>],
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    let c = data.class_count();
    if superclass.len() != c {
        return Err(PartitionError::Invalid(format!(
            "superclass map has {} entries for {c} classes",
            superclass.len()
        )));
    }
    check_sets(subclass_sets, c)?;
    let out = superclass.iter().max().map_or(0, |m| m + 1);
    let clusters = subclass_sets
        .iter()
        .enumerate()
        .map(|(i, set)| plain(i, set.clone(), superclass.to_vec()))
        .collect();
    build_partition(Family::E2a, &[data], clusters, out, clients_per_cluster, part_seed)
}

fn check_sets(sets: &[Vec<usize>], classes: usize) -> Result<()> {
    if sets.is_empty() {
        return Err(PartitionError::Invalid("no subclass sets".into()));
    }
    for s in sets {
        if s.is_empty() || s.iter().any(|&c| c >= classes) {
            return Err(PartitionError::Invalid(format!("bad subclass set {s:?}")));
        }
    }
    Ok(())
}

/// E2b: cluster `k` rotates every image by `ROTATION_ORDER[k]`.
pub fn partition_covariate_rotation(
    data: &SplitDataset,
    k: usize,
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    if k == 0 {
        return Err(PartitionError::Invalid("K must be >= 1".into()));
    }
    if k > ROTATION_ORDER.len() {
        return Err(PartitionError::TooManyRotations(k));
    }
    let c = data.class_count();
    let clusters = ROTATION_ORDER[..k]
        .iter()
        .enumerate()
        .map(|(i, &angle)| ClusterTransform {
            rotation: angle,
            ..plain(i, identity(c), identity(c))
        })
        .collect();
    build_partition(Family::E2b, &[data], clusters, c, clients_per_cluster, part_seed)
}

/// E3a: one cluster per rule, each relabeling the full image pool.
pub fn partition_concept_semantic(
    data: &SplitDataset,
    rules: &[ConceptRule],
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    if rules.is_empty() {
        return Err(PartitionError::Invalid("at least one rule is required".into()));
    }
    let arity = check_arity(rules)?;
    let c = data.class_count();
    check_rule_domain(rules, c)?;
    let clusters = rules
        .iter()
        .enumerate()
        .map(|(i, r)| ClusterTransform {
            pool_key: i,
            concept: i,
            covariate: 0,
            ..plain(i, identity(c), r.table(c))
        })
        .collect();
    build_partition(Family::E3a, &[data], clusters, arity, clients_per_cluster, part_seed)
}

fn check_arity(rules: &[ConceptRule]) -> Result<usize> {
    let arity = rules[0].arity();
    match rules.iter().find(|r| r.arity() != arity) {
        Some(r) => Err(PartitionError::ArityMismatch(arity, r.arity())),
        None => Ok(arity),
    }
}

fn check_rule_domain(rules: &[ConceptRule], classes: usize) -> Result<()> {
    for r in rules {
        if let ConceptRule::Map(m) = r {
            if m.len() != classes {
                return Err(PartitionError::Invalid(format!(
                    "label map has {} entries for {classes} classes",
                    m.len()
                )));
            }
        }
    }
    Ok(())
}

fn is_derangement(p: &[usize]) -> bool {
    p.iter().enumerate().all(|(i, &v)| i != v)
}

/// Identity for cluster 0, then seeded derangements, pairwise distinct.
pub fn label_permutations(classes: usize, k: usize, part_seed: u64) -> Result<Vec<Vec<usize>>> {
    if classes < 2 && k > 1 {
        return Err(PartitionError::Invalid("need at least 2 classes for a derangement".into()));
    }
    // derangement count D(n) = (n - 1)(D(n-1) + D(n-2))
    let mut d = (1u128, 0u128);
    for n in 2..=classes as u128 {
        d = (d.1, (n - 1) * (d.0 + d.1));
    }
    if classes >= 2 && (k as u128).saturating_sub(1) > d.1 {
        return Err(PartitionError::Invalid(format!(
            "{classes} classes admit only {} distinct derangements",
            d.1
        )));
    }
    let mut perms = vec![identity(classes)];
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    for cluster in 1..k {
        let mut rng = seed::stream(part_seed, &[seed::tag::PERMUTATION, cluster as u64]);
        let p = loop {
            let mut p = identity(classes);
            p.shuffle(&mut rng);
            if is_derangement(&p) && !seen.contains(&p) {
                break p;
            }
        };
        seen.insert(p.clone());
        perms.push(p);
    }
    Ok(perms)
}

/// E3b: cluster `k` relabels `y` to `perm_k[y]` on the full image pool.
pub fn partition_concept_permutation(
    data: &SplitDataset,
    k: usize,
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    if k == 0 {
        return Err(PartitionError::Invalid("K must be >= 1".into()));
    }
    let c = data.class_count();
    let clusters = label_permutations(c, k, part_seed)?
        .into_iter()
        .enumerate()
        .map(|(i, p)| ClusterTransform {
            pool_key: i,
            concept: i,
            covariate: 0,
            ..plain(i, identity(c), p)
        })
        .collect();
    build_partition(Family::E3b, &[data], clusters, c, clients_per_cluster, part_seed)
}

/// E4a: cluster 0 draws from `a`, cluster 1 from `b`.
pub fn partition_domain_shift(
    a: &SplitDataset,
    b: &SplitDataset,
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    if a.class_count() != b.class_count() || a.input_shape() != b.input_shape() {
        return Err(PartitionError::DatasetMismatch(format!(
            "{} has {} classes of {:?}, {} has {} classes of {:?}",
            a.name(),
            a.class_count(),
            a.input_shape(),
            b.name(),
            b.class_count(),
            b.input_shape()
        )));
    }
    let c = a.class_count();
    let clusters = (0..2)
        .map(|i| ClusterTransform {
            source: i,
            ..plain(i, identity(c), identity(c))
        })
        .collect();
    build_partition(Family::E4a, &[a, b], clusters, c, clients_per_cluster, part_seed)
}

/// E4b: concept rules crossed with covariate subclass sets; cluster id is
/// `concept * sets.len() + covariate`.
pub fn partition_combined(
    data: &SplitDataset,
    rules: &[ConceptRule],
    subclass_sets: &[Vec<usize>],
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    if rules.len() != 2 {
        return Err(PartitionError::Invalid(format!("E4b needs 2 concept rules, got {}", rules.len())));
    }
    let arity = check_arity(rules)?;
    let c = data.class_count();
    check_rule_domain(rules, c)?;
    check_sets(subclass_sets, c)?;
    let cov = subclass_sets.len();
    let mut clusters = Vec::with_capacity(2 * cov);
    for (concept, rule) in rules.iter().enumerate() {
        for (covariate, set) in subclass_sets.iter().enumerate() {
            clusters.push(ClusterTransform {
                pool_key: concept,
                concept,
                covariate,
                ..plain(concept * cov + covariate, set.clone(), rule.table(c))
            });
        }
    }
    build_partition(Family::E4b, &[data], clusters, arity, clients_per_cluster, part_seed)
}
