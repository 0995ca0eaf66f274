mod common;

use std::collections::HashSet;

use common::toy_split;
use fedcond::datasets::{rotate_image, SplitDataset};
use fedcond::heterogeneity::{
    block_classes, label_permutations, partition_combined, partition_concept_permutation,
    partition_concept_semantic, partition_covariate_rotation, partition_covariate_subclass,
    partition_domain_shift, partition_label_shift, ConceptRule, Partition, PartitionError,
    PartitionSpec,
};

fn data() -> SplitDataset {
    toy_split(10, 30, 8, 4)
}

fn assert_within_cluster_disjoint_and_covering(p: &Partition, data: &SplitDataset, shared_pool: bool) {
    for t in &p.clusters {
        let shards: Vec<_> = p.shards.iter().filter(|s| s.cluster_id == t.cluster_id).collect();
        let mut seen = HashSet::new();
        for s in &shards {
            assert!(!s.train.is_empty() && !s.test.is_empty());
            for &i in &s.train_origin {
                assert!(seen.insert(i), "train index {i} dealt twice in cluster {}", t.cluster_id);
            }
        }
        if !shared_pool {
            let pool = data.train.samples.iter().filter(|s| t.classes.contains(&s.y)).count();
            let sharers = p.clusters.iter().filter(|u| u.classes == t.classes && u.pool_key == t.pool_key).count();
            assert!(seen.len() * sharers > pool - sharers && seen.len() * sharers <= pool + sharers);
        }
        let sizes: Vec<usize> = shards.iter().map(|s| s.train.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

fn assert_globally_disjoint(p: &Partition) {
    let mut seen = HashSet::new();
    for s in &p.shards {
        let src = p.clusters[s.cluster_id].source;
        for &i in &s.train_origin {
            assert!(seen.insert((src, i)), "train sample {i} appears in two shards");
        }
    }
}

#[test]
fn e1_blocks_and_k_equals_c() {
    assert_eq!(block_classes(10, 2).unwrap(), vec![(0..5).collect::<Vec<_>>(), (5..10).collect()]);
    assert_eq!(block_classes(10, 3).unwrap()[0], vec![0, 1, 2, 3]);
    let d = data();
    let p = partition_label_shift(&d, 2, 3, 7).unwrap();
    assert_eq!(p.shards.len(), 6);
    for s in &p.shards {
        let want = if s.cluster_id == 0 { 0..5 } else { 5..10 };
        assert!(s.train.iter().chain(&s.test).all(|x| want.contains(&x.y)));
    }
    assert_globally_disjoint(&p);
    assert_within_cluster_disjoint_and_covering(&p, &d, false);

    let p10 = partition_label_shift(&d, 10, 2, 7).unwrap();
    for s in &p10.shards {
        let labels: HashSet<usize> = s.train.iter().chain(&s.test).map(|x| x.y).collect();
        assert_eq!(labels.len(), 1, "one class per cluster makes a constant predictor perfect");
    }
    assert!(matches!(partition_label_shift(&d, 11, 2, 7), Err(PartitionError::TooManyClusters { .. })));
    let p1 = partition_label_shift(&d, 1, 4, 7).unwrap();
    assert!(p1.shards.iter().all(|s| s.cluster_id == 0));
}

#[test]
fn partitions_are_deterministic_in_seed() {
    let d = data();
    let a = partition_label_shift(&d, 2, 3, 11).unwrap();
    let b = partition_label_shift(&d, 2, 3, 11).unwrap();
    let c = partition_label_shift(&d, 2, 3, 12).unwrap();
    assert_eq!(a.shards, b.shards);
    assert_ne!(a.shards, c.shards);
}

#[test]
fn e2a_parity_over_disjoint_digit_blocks() {
    let d = data();
    let parity = ConceptRule::Parity.table(10);
    let sets = block_classes(10, 2).unwrap();
    let p = partition_covariate_subclass(&d, &parity, &sets, 2, 3).unwrap();
    assert_eq!(p.class_count, 2);
    for s in &p.shards {
        for (x, &i) in s.train.iter().zip(&s.train_origin) {
            let orig = d.train.samples[i].y;
            assert!(sets[s.cluster_id].contains(&orig));
            assert_eq!(x.y, orig % 2);
        }
    }
    assert_globally_disjoint(&p);
    // identical sets are an IID split of one pool
    let iid = partition_covariate_subclass(&d, &parity, &[(0..10).collect(), (0..10).collect()], 2, 3).unwrap();
    assert_globally_disjoint(&iid);
    assert_within_cluster_disjoint_and_covering(&iid, &d, false);
    let bad = partition_covariate_subclass(&d, &parity, &[vec![0, 1, 2], vec![2, 3]], 2, 3);
    assert!(matches!(bad, Err(PartitionError::OverlappingSubclasses(..))));
}

#[test]
fn e2b_rotations_follow_order_and_keep_labels() {
    let d = data();
    let p = partition_covariate_rotation(&d, 4, 2, 5).unwrap();
    let angles: Vec<u32> = p.clusters.iter().map(|c| c.rotation).collect();
    assert_eq!(angles, vec![0, 180, 90, 270]);
    for s in &p.shards {
        let angle = angles[s.cluster_id];
        for (x, &i) in s.train.iter().zip(&s.train_origin) {
            let src = &d.train.samples[i];
            assert_eq!(x.y, src.y);
            assert_eq!(x.x, rotate_image(&src.x, &[4, 4], angle).unwrap());
        }
    }
    assert_globally_disjoint(&p);
    assert_eq!(partition_covariate_rotation(&d, 2, 2, 5).unwrap().clusters[1].rotation, 180);
    assert!(matches!(partition_covariate_rotation(&d, 5, 2, 5), Err(PartitionError::TooManyRotations(5))));
}

#[test]
fn e3a_conflict_rate_matches_label_table_count() {
    // digits whose parity label differs from the at-least-5 label
    let conflicts = (0..10usize).filter(|&y| y % 2 != usize::from(y >= 5)).count();
    assert_eq!(conflicts, 4);
    assert_eq!((3 % 2, usize::from(3 >= 5)), (1, 0));

    let d = data();
    let rules = [ConceptRule::Parity, ConceptRule::Threshold(5)];
    let p = partition_concept_semantic(&d, &rules, 2, 9).unwrap();
    let label_of = |cluster: usize| -> std::collections::HashMap<usize, usize> {
        p.shards
            .iter()
            .filter(|s| s.cluster_id == cluster)
            .flat_map(|s| s.train_origin.iter().copied().zip(s.train.iter().map(|x| x.y)))
            .collect()
    };
    let (a, b) = (label_of(0), label_of(1));
    assert_eq!(a.len(), d.train.len(), "each concept cluster sees the full pool");
    let differing = a.iter().filter(|(i, y)| b[i] != **y).count();
    let expected = d.train.samples.iter().filter(|s| s.y % 2 != usize::from(s.y >= 5)).count();
    assert_eq!(differing, expected);
    assert_within_cluster_disjoint_and_covering(&p, &d, true);

    let mismatched = [ConceptRule::Parity, ConceptRule::Map(vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0])];
    assert!(matches!(partition_concept_semantic(&d, &mismatched, 2, 9), Err(PartitionError::ArityMismatch(2, 3))));
}

#[test]
fn e3b_permutations_are_distinct_derangements_and_invert() {
    let perms = label_permutations(10, 5, 21).unwrap();
    assert_eq!(perms[0], (0..10).collect::<Vec<_>>());
    for p in &perms[1..] {
        assert!(p.iter().enumerate().all(|(i, &v)| i != v));
    }
    let unique: HashSet<_> = perms.iter().collect();
    assert_eq!(unique.len(), 5);

    let d = data();
    let p = partition_concept_permutation(&d, 3, 2, 21).unwrap();
    for s in &p.shards {
        let perm = &p.clusters[s.cluster_id].label_map;
        let mut inverse = [0; 10];
        for (y, &py) in perm.iter().enumerate() {
            inverse[py] = y;
        }
        for (x, &i) in s.train.iter().zip(&s.train_origin) {
            assert_eq!(inverse[x.y], d.train.samples[i].y);
        }
    }
    assert!(label_permutations(2, 3, 0).is_err());
}

#[test]
fn e4a_sources_get_fixed_cluster_ids() {
    let a = data();
    let mut b = toy_split(10, 20, 6, 4);
    b.train.name = "other".into();
    let p = partition_domain_shift(&a, &b, 2, 1).unwrap();
    for s in &p.shards {
        let src = if s.cluster_id == 0 { &a } else { &b };
        for (x, &i) in s.train.iter().zip(&s.train_origin) {
            assert_eq!(x, &src.train.samples[i]);
        }
    }
    let c = toy_split(5, 20, 6, 4);
    assert!(matches!(partition_domain_shift(&a, &c, 2, 1), Err(PartitionError::DatasetMismatch(_))));
}

#[test]
fn e4b_encodes_both_axes() {
    let d = data();
    let rules = [ConceptRule::Parity, ConceptRule::Threshold(5)];
    let sets = block_classes(10, 3).unwrap();
    let p = partition_combined(&d, &rules, &sets, 2, 4).unwrap();
    assert_eq!(p.cluster_count(), 6);
    for s in &p.shards {
        assert_eq!(s.cluster_id, s.concept_id * 3 + s.covariate_id);
        for (x, &i) in s.train.iter().zip(&s.train_origin) {
            let orig = d.train.samples[i].y;
            assert!(sets[s.covariate_id].contains(&orig));
            assert_eq!(x.y, rules[s.concept_id].apply(orig));
        }
    }
    // identical covariate sets collapse to the pure concept split
    let same = partition_combined(&d, &rules, &[(0..10).collect(), (0..10).collect()], 2, 4).unwrap();
    for s in &same.shards {
        assert!(s.train.iter().zip(&s.train_origin).all(|(x, &i)| x.y == rules[s.concept_id].apply(d.train.samples[i].y)));
    }
}

#[test]
fn spec_dispatch_matches_direct_calls() {
    let d = data();
    let spec: PartitionSpec = toml::from_str("family = \"E1\"\nk = 2").unwrap();
    let via_spec = spec.partition(&d, None, 3, 5).unwrap();
    assert_eq!(via_spec.shards, partition_label_shift(&d, 2, 3, 5).unwrap().shards);
    assert!(PartitionSpec::E4a.partition(&d, None, 3, 5).is_err());
    assert!(matches!(
        partition_label_shift(&d, 2, 200, 5),
        Err(PartitionError::TooFewSamples { .. })
    ));
}
