use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{ClientShard, ClusterTransform, Family, Partition, PartitionError, Result};
use crate::datasets::{rotate_image, Dataset, Sample, SplitDataset};
use crate::seed;

const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;

/// Materializes client shards for the given cluster transforms.
///
/// Each source split is shuffled once; a cluster's pool is the admitted
/// classes in that order. Clusters sharing a pool take interleaved slots of
/// it, so their samples never coincide.
pub fn build_partition(
    family: Family,
    sources: &[&SplitDataset],
    clusters: Vec<ClusterTransform>,
    class_count: usize,
    clients_per_cluster: usize,
    part_seed: u64,
) -> Result<Partition> {
    if clients_per_cluster == 0 {
        return Err(PartitionError::Invalid("clients_per_cluster must be >= 1".into()));
    }
    if clusters.is_empty() {
        return Err(PartitionError::Invalid("no clusters".into()));
    }
    let input_shape = sources[0].input_shape().to_vec();
    let shares = shares(&clusters)?;
    let orders: Vec<[Vec<usize>; 2]> = sources
        .iter()
        .enumerate()
        .map(|(s, d)| {
            [(&d.train, SPLIT_TRAIN), (&d.test, SPLIT_TEST)].map(|(split, tag)| {
                let mut idx: Vec<usize> = (0..split.len()).collect();
                idx.shuffle(&mut seed::stream(part_seed, &[seed::tag::PARTITION, s as u64, tag]));
                idx
            })
        })
        .collect();

    let mut shards = Vec::with_capacity(clusters.len() * clients_per_cluster);
    for (t, &(slot, of)) in clusters.iter().zip(&shares) {
        let src = sources[t.source];
        let mut dealt = Vec::with_capacity(2);
        for (split, tag, name) in [(&src.train, SPLIT_TRAIN, "train"), (&src.test, SPLIT_TEST, "test")] {
            let mut pool: Vec<usize> = orders[t.source][tag as usize]
                .iter()
                .copied()
                .filter(|&i| t.classes.contains(&split.samples[i].y))
                .enumerate()
                .filter(|(j, _)| j % of == slot)
                .map(|(_, i)| i)
                .collect();
            if pool.len() < clients_per_cluster {
                return Err(PartitionError::TooFewSamples {
                    cluster: t.cluster_id,
                    split: name,
                    available: pool.len(),
                    clients: clients_per_cluster,
                });
            }
            pool.shuffle(&mut seed::stream(
                part_seed,
                &[seed::tag::PARTITION, u64::MAX, t.cluster_id as u64, tag],
            ));
            dealt.push(deal(split, &pool, t, clients_per_cluster)?);
        }
        let test = dealt.pop().expect("two splits");
        let train = dealt.pop().expect("two splits");
        for ((tr, tr_idx), (te, te_idx)) in train.into_iter().zip(test) {
            shards.push(ClientShard {
                client_id: shards.len(),
                cluster_id: t.cluster_id,
                concept_id: t.concept,
                covariate_id: t.covariate,
                train: tr,
                test: te,
                train_origin: tr_idx,
                test_origin: te_idx,
                stats: None,
            });
        }
    }
    Ok(Partition {
        family,
        clusters,
        shards,
        class_count,
        input_shape,
    })
}

type Dealt = Vec<(Vec<Sample>, Vec<usize>)>;

fn deal(split: &Dataset, pool: &[usize], t: &ClusterTransform, clients: usize) -> Result<Dealt> {
    let mut out: Dealt = (0..clients).map(|_| (Vec::new(), Vec::new())).collect();
    for (j, &i) in pool.iter().enumerate() {
        let s = &split.samples[i];
        let x = if t.rotation == 0 {
            s.x.clone()
        } else {
            rotate_image(&s.x, &split.input_shape, t.rotation)?
        };
        let (samples, origin) = &mut out[j % clients];
        samples.push(Sample { x, y: t.label_map[s.y] });
        origin.push(i);
    }
    Ok(out)
}

/// `(slot, of)` for every cluster. Pools with a common key must have
/// identical or disjoint class sets.
fn shares(clusters: &[ClusterTransform]) -> Result<Vec<(usize, usize)>> {
    let mut groups: BTreeMap<(usize, usize, Vec<usize>), Vec<usize>> = BTreeMap::new();
    for (i, t) in clusters.iter().enumerate() {
        let mut classes = t.classes.clone();
        classes.sort_unstable();
        groups.entry((t.source, t.pool_key, classes)).or_default().push(i);
    }
    let keys: Vec<_> = groups.keys().collect();
    for (a, ka) in keys.iter().enumerate() {
        for kb in &keys[a + 1..] {
            if ka.0 == kb.0 && ka.1 == kb.1 && ka.2.iter().any(|c| kb.2.contains(c)) {
                return Err(PartitionError::OverlappingSubclasses(ka.2.clone(), kb.2.clone()));
            }
        }
    }
    let mut out = vec![(0, 1); clusters.len()];
    for members in groups.values() {
        for (slot, &i) in members.iter().enumerate() {
            out[i] = (slot, members.len());
        }
    }
    Ok(out)
}
