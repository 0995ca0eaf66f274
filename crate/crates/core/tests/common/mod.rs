//! Oracles and fixtures shared by the integration and acceptance tests.
//! The oracles never call into the code path they are used to check; the
//! fixtures only build inputs.

#![allow(dead_code)]

use fedcond::nn::{loss_and_grad, Architecture, Example, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Worst relative error between analytic and central-difference gradients
/// over up to `budget` coordinates, drawn so every parameter tensor is hit.
pub fn gradient_check(
    arch: &Architecture,
    params: &ModelParams,
    batch: &[Example],
    budget: usize,
    eps: f64,
    seed: u64,
) -> (f64, usize) {
    let (_, grad) = loss_and_grad(params, arch, batch).unwrap();
    let mut r = rng(seed);
    let slots = params.layout().slots.clone();
    let per_slot = (budget / slots.len()).max(1);
    let mut coords = Vec::new();
    for slot in &slots {
        if slot.len <= per_slot {
            coords.extend(slot.offset..slot.offset + slot.len);
        } else {
            for _ in 0..per_slot {
                coords.push(slot.offset + r.gen_range(0..slot.len));
            }
        }
    }
    coords.truncate(budget);
    let mut worst: f64 = 0.0;
    for &i in &coords {
        let mut plus = params.clone();
        plus.as_mut_slice()[i] += eps;
        let mut minus = params.clone();
        minus.as_mut_slice()[i] -= eps;
        let lp = loss_and_grad(&plus, arch, batch).unwrap().0;
        let lm = loss_and_grad(&minus, arch, batch).unwrap().0;
        let numeric = (lp - lm) / (2.0 * eps);
        let analytic = grad.as_slice()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    (worst, coords.len())
}

/// Random small instances covering every layer type: dense + ReLU (MLP),
/// the statistics-concat junction (conditional MLP / CNN), conv + maxpool +
/// flatten (CNN).
pub struct GradInstance {
    pub label: &'static str,
    pub arch: Architecture,
    pub params: ModelParams,
    pub xs: Vec<Vec<f64>>,
    pub stats: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
}

impl GradInstance {
    pub fn examples(&self) -> Vec<Example<'_>> {
        self.xs
            .iter()
            .zip(&self.ys)
            .enumerate()
            .map(|(i, (x, &y))| Example {
                x,
                stats: self.arch.kind.is_conditional().then(|| self.stats[i].as_slice()),
                y,
            })
            .collect()
    }
}

pub fn grad_instances(seed: u64) -> Vec<GradInstance> {
    let mut r = rng(seed);
    let archs: Vec<(&'static str, Architecture)> = vec![
        ("dense+relu", Architecture::mlp(7, 4, 6).unwrap()),
        ("concat junction (mlp)", Architecture::mlp_conditional(7, 4, 6, 3).unwrap()),
        (
            "conv+maxpool+flatten",
            Architecture::new(fedcond::ArchitectureKind::MnistCnn, vec![1, 8, 8], 3, 5, 0)
                .unwrap()
                .with_conv_channels(3, 4)
                .unwrap(),
        ),
        (
            "concat junction (cnn)",
            Architecture::new(fedcond::ArchitectureKind::MnistCnnConditional, vec![2, 8, 4], 3, 5, 2)
                .unwrap()
                .with_conv_channels(2, 3)
                .unwrap(),
        ),
    ];
    archs
        .into_iter()
        .map(|(label, arch)| {
            let params = ModelParams::init(&arch, r.gen());
            // Nonzero biases so ReLUs are not all aligned at the same kink.
            let mut params = params;
            for (name, _, _) in params.clone().layers() {
                if name.ends_with("bias") {
                    for b in params.layer_mut(name).unwrap() {
                        *b = r.gen_range(-0.1..0.1);
                    }
                }
            }
            let rows = 4;
            let xs = (0..rows)
                .map(|_| (0..arch.input_len()).map(|_| r.gen_range(0.0..1.0)).collect())
                .collect();
            let stats = (0..rows)
                .map(|_| (0..arch.stats_dim).map(|_| r.gen_range(0.0..3.0)).collect())
                .collect();
            let ys = (0..rows).map(|_| r.gen_range(0..arch.class_count)).collect();
            GradInstance { label, arch, params, xs, stats, ys }
        })
        .collect()
}

/// Cyclic Jacobi eigenvalues of a dense symmetric matrix, descending.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}

/// Explicit column-centered covariance with divisor n - 1.
pub fn covariance(rows: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j] / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    if n < 2 {
        return (cov, d);
    }
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|v| *v /= (n - 1) as f64);
    (cov, d)
}

/// Adjusted Rand index by enumerating every pair of items.
pub fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            if sa && sb {
                both += 1.0;
            }
            if sa {
                only_a += 1.0;
            }
            if sb {
                only_b += 1.0;
            }
        }
    }
    let expected = only_a * only_b / pairs;
    let max = 0.5 * (only_a + only_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

/// Square `side x side` images whose pixels encode (class, index) uniquely,
/// so rotations and relabelings can be traced back to the source sample.
pub fn toy_split(classes: usize, train_per_class: usize, test_per_class: usize, side: usize) -> fedcond::datasets::SplitDataset {
    use fedcond::datasets::{Dataset, Sample, SplitDataset};
    let make = |per: usize, offset: usize| {
        let samples: Vec<Sample> = (0..per * classes)
            .map(|i| {
                let y = i % classes;
                let tag = (offset + i) as f64;
                let x = (0..side * side).map(|p| ((tag * 31.0 + p as f64 * 7.0) % 251.0) / 255.0).collect();
                Sample { x, y }
            })
            .collect();
        Dataset::new("toy", samples, classes, vec![side, side]).unwrap()
    };
    SplitDataset::new(make(train_per_class, 0), make(test_per_class, 1_000_000)).unwrap()
}

/// Client shards drawn from synthetic Gaussian clusters, fingerprinted.
/// Cluster `k` yields `clients` shards with `train`/`test` samples each.
pub fn synthetic_shards(
    specs: &[fedcond::datasets::SynthCluster],
    clients: usize,
    train: usize,
    test: usize,
    l: usize,
    seed: u64,
) -> Vec<fedcond::heterogeneity::ClientShard> {
    use fedcond::datasets::{synth_clusters, FeatureExtractor};
    use fedcond::heterogeneity::ClientShard;
    use fedcond::stats::fingerprint_client;
    let per = clients * (train + test);
    let (data, ids) = synth_clusters(specs, per, seed).unwrap();
    let classes = data.class_count.max(2);
    let fx = FeatureExtractor::identity(data.input_len());
    let mut shards = Vec::new();
    for k in 0..specs.len() {
        let pool: Vec<_> = data.samples.iter().zip(&ids).filter(|(_, c)| **c == k).map(|(s, _)| s.clone()).collect();
        for c in 0..clients {
            let chunk = &pool[c * (train + test)..(c + 1) * (train + test)];
            let (tr, te) = chunk.split_at(train);
            let stats = fingerprint_client(tr, &fx, classes, l).unwrap();
            shards.push(ClientShard {
                client_id: shards.len(),
                cluster_id: k,
                concept_id: k,
                covariate_id: 0,
                train: tr.to_vec(),
                test: te.to_vec(),
                train_origin: (0..train).collect(),
                test_origin: (0..test).collect(),
                stats: Some(stats),
            });
        }
    }
    shards
}
