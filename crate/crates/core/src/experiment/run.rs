use std::collections::BTreeMap;
use std::env;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Backbone, DatasetRef, ExperimentConfig, DATA_ROOT_ENV};
use super::report::{emit_report, Formats};
use super::{compute_ari, ExperimentError, Result, Stage};
use crate::datasets::{synthetic_classes, FeatureExtractor, SplitDataset};
use crate::federation::{evaluate, Federation, LogRecord, StrategyConfig, StrategyKind};
use crate::heterogeneity::{Family, Partition};
use crate::nn::{Architecture, ArchitectureKind};
use crate::seed;
use crate::stats::{build_augmented, pca_eigenvalues_with};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// 1 runs everything on the calling thread; 0 uses every core.
    pub threads: usize,
    pub formats: Formats,
    /// Dataset root; `FEDCOND_DATA_ROOT`, then `./data`, when absent.
    pub data_root: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            formats: Formats::BOTH,
            data_root: None,
        }
    }
}

impl RunOptions {
    pub fn data_root(&self) -> PathBuf {
        self.data_root
            .clone()
            .or_else(|| env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    fn parallel(&self) -> bool {
        self.threads != 1
    }
}

/// Runs `f` on a pool of `threads` workers, or inline when `threads == 1`.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 1 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(ExperimentError::at(Stage::Config))?;
    Ok(pool.install(f))
}

/// Uncapped source datasets.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub primary: SplitDataset,
    pub second: Option<SplitDataset>,
}

fn load_ref(r: &DatasetRef, root: &Path, run_seed: u64) -> Result<SplitDataset> {
    match r.canonical() {
        Some("synthetic") => {
            let s = r.synthetic.clone().unwrap_or_default();
            synthetic_classes(
                s.classes,
                s.dim,
                s.train_per_class,
                s.test_per_class,
                s.scale,
                seed::derive(run_seed, &[seed::tag::SYNTH]),
            )
            .map_err(ExperimentError::at(Stage::Load))
        }
        Some(name) => {
            let dir = r.resolve_dir(root);
            SplitDataset::from_idx_dir(&dir, name).map_err(ExperimentError::at(Stage::Load))
        }
        None => Err(ExperimentError::msg(Stage::Load, format!("unknown dataset {:?}", r.name))),
    }
}

pub fn load_data(cfg: &ExperimentConfig, root: &Path) -> Result<LoadedData> {
    Ok(LoadedData {
        primary: load_ref(&cfg.dataset.primary, root, cfg.seed)?,
        second: cfg
            .dataset
            .second
            .as_ref()
            .map(|r| load_ref(r, root, cfg.seed))
            .transpose()?,
    })
}

/// Caps, partitions and fingerprints: everything before training.
pub fn prepare(cfg: &ExperimentConfig, data: &LoadedData, parallel: bool) -> Result<Partition> {
    cfg.validate()?;
    let cap = |d: &SplitDataset, which: u64| {
        if cfg.dataset.per_class_cap == 0 {
            d.clone()
        } else {
            d.cap_per_class(cfg.dataset.per_class_cap, seed::derive(cfg.seed, &[seed::tag::SUBSAMPLE, which]))
        }
    };
    let primary = cap(&data.primary, 0);
    let second = data.second.as_ref().map(|d| cap(d, 1));
    let mut partition = cfg
        .heterogeneity
        .partition
        .partition(
            &primary,
            second.as_ref(),
            cfg.heterogeneity.clients_per_cluster(),
            seed::derive(cfg.seed, &[seed::tag::PARTITION]),
        )
        .map_err(ExperimentError::at(Stage::Partition))?;

    let classes = partition.class_count;
    let fx = FeatureExtractor::for_kind(cfg.stats.extractor, primary.input_shape().iter().product());
    let (l, solver) = (cfg.stats.l, cfg.stats.solver);
    let fingerprint = |s: &mut crate::heterogeneity::ClientShard| -> Result<()> {
        let z = build_augmented(&s.train, &fx, classes).map_err(ExperimentError::at(Stage::Fingerprint))?;
        s.stats = Some(pca_eigenvalues_with(&z, l, solver).map_err(ExperimentError::at(Stage::Fingerprint))?);
        Ok(())
    };
    if parallel {
        partition.shards.par_iter_mut().try_for_each(fingerprint)?;
    } else {
        partition.shards.iter_mut().try_for_each(fingerprint)?;
    }
    Ok(partition)
}

/// The unconditioned backbone for a partition.
pub fn backbone(cfg: &ExperimentConfig, partition: &Partition) -> Result<Architecture> {
    let input: usize = partition.input_shape.iter().product();
    let arch = match cfg.model.architecture {
        Backbone::Mlp => Architecture::mlp(input, partition.class_count, cfg.model.hidden_dim),
        Backbone::Cnn => {
            if input != 28 * 28 {
                return Err(ExperimentError::msg(
                    Stage::Config,
                    format!("the CNN backbone needs 28x28 inputs, got {:?}", partition.input_shape),
                ));
            }
            Architecture::new(ArchitectureKind::MnistCnn, vec![1, 28, 28], partition.class_count, cfg.model.hidden_dim, 0)
                .and_then(|a| match cfg.model.conv_channels {
                    Some([a1, a2]) => a.with_conv_channels(a1, a2),
                    None => Ok(a),
                })
        }
    };
    arch.map_err(ExperimentError::at(Stage::Config))
}

/// Largest within-cluster and smallest between-cluster fingerprint distance.
pub fn fingerprint_separation(partition: &Partition) -> Option<(f64, f64)> {
    let shards = &partition.shards;
    let mut within = 0.0f64;
    let mut between = f64::INFINITY;
    for i in 0..shards.len() {
        for j in i + 1..shards.len() {
            let d = shards[i].stats.as_ref()?.distance(shards[j].stats.as_ref()?);
            if shards[i].cluster_id == shards[j].cluster_id {
                within = within.max(d);
            } else {
                between = between.min(d);
            }
        }
    }
    Some((within, between))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEcho {
    pub pixel_scaling: String,
    pub feature_extractor: String,
    pub pca_centering: String,
    pub covariance_divisor: String,
    pub eigenvalue_normalization: String,
    pub pca_solver: String,
    pub stats_dim: usize,
    pub per_class_cap: usize,
    pub train_test_sourcing: String,
    pub backbone: String,
    pub precision: String,
    pub fedavg_weighting: String,
    pub evaluation_mean: String,
    /// Per strategy: "R rounds x L local epochs" or "E pooled epochs".
    pub round_budget: BTreeMap<String, String>,
}

impl DesignEcho {
    fn new(cfg: &ExperimentConfig, arch: &Architecture, strategies: &[StrategyConfig]) -> Self {
        let budget = strategies
            .iter()
            .map(|c| {
                let text = match c.kind {
                    StrategyKind::Conditional | StrategyKind::Oracle => format!("{} pooled epochs", c.epochs),
                    _ => format!("{} rounds x {} local epochs", c.rounds(), c.local_epochs_per_round),
                };
                (c.kind.to_string(), text)
            })
            .collect();
        Self {
            pixel_scaling: "divide by 255 into [0, 1]; no standardization".into(),
            feature_extractor: format!("{:?}", cfg.stats.extractor).to_lowercase(),
            pca_centering: "column means subtracted".into(),
            covariance_divisor: "n - 1 (single sample gives zeros)".into(),
            eigenvalue_normalization: "none (raw eigenvalues, zero-padded)".into(),
            pca_solver: format!("{:?}", cfg.stats.solver).to_lowercase(),
            stats_dim: cfg.stats.l,
            per_class_cap: cfg.dataset.per_class_cap,
            train_test_sourcing: "train shards from the train split, test shards from the test split".into(),
            backbone: arch.id(),
            precision: "f64".into(),
            fedavg_weighting: "train sample count".into(),
            evaluation_mean: "unweighted over clients".into(),
            round_budget: budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: usize,
    pub cluster_id: usize,
    pub concept_id: usize,
    pub covariate_id: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub fingerprint: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: StrategyKind,
    pub config: StrategyConfig,
    pub per_client_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    /// Against the ground-truth cluster ids (clustering strategies only).
    pub ari: Option<f64>,
    /// Against the concept and covariate axes separately (E4b only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ari_axes: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<usize>>,
    pub train_log: Vec<LogRecord>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub package: String,
    pub version: String,
    pub git: Option<String>,
}

impl BuildInfo {
    fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            git: option_env!("FEDCOND_GIT_REV").map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub family: Family,
    pub dataset: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub sparsity: String,
    pub clients_per_cluster: usize,
    pub class_count: usize,
    pub config: ExperimentConfig,
    pub design: DesignEcho,
    pub clients: Vec<ClientRecord>,
    pub strategies: Vec<StrategyResult>,
    pub wall_clock_secs: f64,
    pub build: BuildInfo,
}

impl RunReport {
    pub fn strategy(&self, kind: StrategyKind) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.strategy == kind)
    }

    pub fn mean_accuracy(&self, kind: StrategyKind) -> Option<f64> {
        self.strategy(kind).map(|s| s.mean_accuracy)
    }
}

/// Runs every stage on already-loaded data; writes nothing.
pub fn run_loaded(cfg: &ExperimentConfig, data: &LoadedData, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    let run_id = cfg.run_id();
    with_threads(opts.threads, || {
        let partition = prepare(cfg, data, opts.parallel())?;
        let arch = backbone(cfg, &partition)?;
        let strategy_cfgs: Vec<StrategyConfig> = cfg.strategies.iter().map(|k| cfg.strategy_config(*k)).collect();
        let truth = partition.cluster_ids();
        let fed = Federation::new(&partition.shards, &arch, cfg.seed)
            .map_err(ExperimentError::at(Stage::Train))?
            .parallel(opts.parallel());
        let mut results = Vec::with_capacity(strategy_cfgs.len());
        for sc in &strategy_cfgs {
            let t0 = Instant::now();
            log::info!("{run_id}: training {}", sc.kind);
            let outcome = fed
                .train(sc, partition.cluster_count())
                .map_err(|e| ExperimentError::msg(Stage::Train, format!("{}: {e}", sc.kind)))?;
            let eval = evaluate(&outcome, &partition.shards, opts.parallel())
                .map_err(|e| ExperimentError::msg(Stage::Evaluate, format!("{}: {e}", sc.kind)))?;
            let (ari, ari_axes) = match &outcome.assignments {
                Some(est) if truth.len() >= 2 => {
                    let ari = compute_ari(&truth, est)?;
                    let axes = if partition.family == Family::E4b {
                        let concept: Vec<usize> = partition.shards.iter().map(|s| s.concept_id).collect();
                        let covariate: Vec<usize> = partition.shards.iter().map(|s| s.covariate_id).collect();
                        Some([compute_ari(&concept, est)?, compute_ari(&covariate, est)?])
                    } else {
                        None
                    };
                    (Some(ari), axes)
                }
                _ => (None, None),
            };
            log::info!("{run_id}: {} mean accuracy {:.4}", sc.kind, eval.mean);
            results.push(StrategyResult {
                strategy: sc.kind,
                config: sc.clone(),
                per_client_accuracy: eval.per_client,
                mean_accuracy: eval.mean,
                ari,
                ari_axes,
                assignments: outcome.assignments.clone(),
                train_log: outcome.log,
                wall_clock_secs: t0.elapsed().as_secs_f64(),
            });
        }
        let clients = partition
            .shards
            .iter()
            .map(|s| ClientRecord {
                client_id: s.client_id,
                cluster_id: s.cluster_id,
                concept_id: s.concept_id,
                covariate_id: s.covariate_id,
                train_size: s.train.len(),
                test_size: s.test.len(),
                fingerprint: s.stats.as_ref().map(|v| v.as_slice().to_vec()).unwrap_or_default(),
            })
            .collect();
        Ok(RunReport {
            run_id: run_id.clone(),
            family: partition.family,
            dataset: data.primary.name().to_string(),
            k: partition.cluster_count(),
            sparsity: cfg.heterogeneity.sparsity_label(),
            clients_per_cluster: cfg.heterogeneity.clients_per_cluster(),
            class_count: partition.class_count,
            config: cfg.clone(),
            design: DesignEcho::new(cfg, &arch, &strategy_cfgs),
            clients,
            strategies: results,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            build: BuildInfo::current(),
        })
    })?
}

/// Loads data, runs, and writes reports to `cfg.output_dir` when set.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    cfg.validate()?;
    let data = load_data(cfg, &opts.data_root())?;
    let report = run_loaded(cfg, &data, opts)?;
    if let Some(dir) = &cfg.output_dir {
        emit_report(&report, dir, opts.formats)?;
    }
    Ok(report)
}
