use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{DatasetRef, ExperimentConfig};
use super::report::{emit_report, write_aggregate};
use super::run::{load_data, run_loaded, LoadedData, RunOptions, RunReport};
use super::{ExperimentError, Result, Stage};
use crate::datasets::SplitDataset;
use crate::heterogeneity::{default_concept_rules, Family, PartitionSpec, SparsityLevel};
use crate::seed;

/// Axes of a grid. Empty axes fall back to the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridAxes {
    pub datasets: Vec<String>,
    /// Crossed with `ks`; families without a cluster count run once.
    pub families: Vec<Family>,
    pub ks: Vec<usize>,
    /// Fully specified partitions, run in addition to `families x ks`.
    pub partitions: Vec<PartitionSpec>,
    pub sparsity: Vec<SparsityLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Runs per grid cell, each with its own child seed.
    #[serde(default = "one")]
    pub replicates: usize,
    pub base: ExperimentConfig,
    #[serde(default)]
    pub grid: GridAxes,
}

fn one() -> usize {
    1
}

pub fn child_seed(master: u64, index: usize) -> u64 {
    seed::derive(master, &[seed::tag::SUITE, index as u64])
}

fn spec_for(family: Family, k: usize) -> PartitionSpec {
    match family {
        Family::E1 => PartitionSpec::E1 { k },
        Family::E2a => PartitionSpec::E2a {
            k,
            superclass: None,
            subclass_sets: None,
        },
        Family::E2b => PartitionSpec::E2b { k },
        Family::E3a => PartitionSpec::E3a {
            rules: default_concept_rules(),
        },
        Family::E3b => PartitionSpec::E3b { k },
        Family::E4a => PartitionSpec::E4a,
        Family::E4b => PartitionSpec::E4b {
            covariate_clusters: k,
            rules: default_concept_rules(),
            subclass_sets: None,
        },
    }
}

fn takes_k(family: Family) -> bool {
    !matches!(family, Family::E3a | Family::E4a)
}

/// The other half of the MNIST / Fashion-MNIST pair.
fn partner(primary: &DatasetRef) -> Option<DatasetRef> {
    match primary.canonical()? {
        "mnist" => Some(DatasetRef::named("fashion-mnist")),
        "fashion-mnist" => Some(DatasetRef::named("mnist")),
        _ => None,
    }
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let grid: Self = toml::from_str(text).map_err(ExperimentError::at(Stage::Config))?;
        if grid.replicates == 0 {
            return Err(ExperimentError::msg(Stage::Config, "replicates must be >= 1".into()));
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::msg(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn partitions(&self) -> Vec<PartitionSpec> {
        let base = &self.base.heterogeneity.partition;
        let mut out = Vec::new();
        let ks = if self.grid.ks.is_empty() { vec![base.cluster_count()] } else { self.grid.ks.clone() };
        for family in &self.grid.families {
            if takes_k(*family) {
                out.extend(ks.iter().map(|k| spec_for(*family, *k)));
            } else {
                out.push(spec_for(*family, 0));
            }
        }
        out.extend(self.grid.partitions.iter().cloned());
        if out.is_empty() {
            out.push(base.clone());
        }
        out
    }

    /// Child configs in run order, with seeds, ids and output dirs filled in.
    pub fn expand(&self) -> Vec<ExperimentConfig> {
        let datasets: Vec<DatasetRef> = if self.grid.datasets.is_empty() {
            vec![self.base.dataset.primary.clone()]
        } else {
            self.grid.datasets.iter().map(|n| DatasetRef::named(n)).collect()
        };
        let sparsity: Vec<Option<SparsityLevel>> = if self.grid.sparsity.is_empty() {
            vec![None]
        } else {
            self.grid.sparsity.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for dataset in &datasets {
            for partition in self.partitions() {
                for level in &sparsity {
                    for _ in 0..self.replicates {
                        let index = out.len();
                        let mut cfg = self.base.clone();
                        cfg.dataset.primary = dataset.clone();
                        cfg.dataset.second = if partition.needs_second_dataset() {
                            self.base.dataset.second.clone().or_else(|| partner(dataset))
                        } else {
                            None
                        };
                        cfg.heterogeneity.partition = partition.clone();
                        if let Some(level) = level {
                            cfg.heterogeneity.sparsity = Some(*level);
                            cfg.heterogeneity.clients_per_cluster = None;
                        }
                        cfg.seed = child_seed(self.seed, index);
                        let id = format!("run-{index:04}");
                        cfg.output_dir = self.output_dir.as_ref().map(|d| d.join(&id));
                        cfg.run_id = Some(id);
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub index: usize,
    pub run_id: String,
    pub seed: u64,
    pub family: Family,
    pub dataset: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub sparsity: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub entries: Vec<SuiteEntry>,
    pub reports: Vec<RunReport>,
}

impl SuiteOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &SuiteEntry> {
        self.entries.iter().filter(|e| e.error.is_some())
    }
}

#[derive(Default)]
struct DataCache {
    sets: HashMap<String, SplitDataset>,
}

impl DataCache {
    /// Real datasets are loaded once per suite; synthetic ones depend on the
    /// run seed and are rebuilt.
    fn get(&mut self, cfg: &ExperimentConfig, root: &Path) -> Result<LoadedData> {
        let mut fetch = |r: &DatasetRef| -> Result<SplitDataset> {
            let key = r.canonical().unwrap_or(&r.name).to_string();
            if key == "synthetic" || r.path.is_some() {
                let mut probe = cfg.clone();
                probe.dataset.primary = r.clone();
                probe.dataset.second = None;
                return Ok(load_data(&probe, root)?.primary);
            }
            if let Some(d) = self.sets.get(&key) {
                return Ok(d.clone());
            }
            let mut probe = cfg.clone();
            probe.dataset.primary = r.clone();
            probe.dataset.second = None;
            let d = load_data(&probe, root)?.primary;
            self.sets.insert(key, d.clone());
            Ok(d)
        };
        Ok(LoadedData {
            primary: fetch(&cfg.dataset.primary)?,
            second: cfg.dataset.second.as_ref().map(&mut fetch).transpose()?,
        })
    }
}

fn emit_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::msg(Stage::Emit, format!("{}: {e}", path.display()))
}

/// Runs every grid cell in order. A failing run is recorded and the suite
/// moves on; the error only surfaces through [`SuiteOutcome::failures`].
pub fn run_suite(grid: &GridConfig, opts: &RunOptions) -> Result<SuiteOutcome> {
    let root = opts.data_root();
    let mut cache = DataCache::default();
    let mut outcome = SuiteOutcome::default();
    let configs = grid.expand();
    let total = configs.len();
    for (index, cfg) in configs.into_iter().enumerate() {
        let run_id = cfg.run_id();
        log::info!("suite: {run_id} ({} of {total})", index + 1);
        let result = cfg
            .validate()
            .and_then(|_| cache.get(&cfg, &root))
            .and_then(|data| run_loaded(&cfg, &data, opts))
            .and_then(|report| {
                if let Some(dir) = &cfg.output_dir {
                    emit_report(&report, dir, opts.formats)?;
                }
                Ok(report)
            });
        let mut entry = SuiteEntry {
            index,
            run_id,
            seed: cfg.seed,
            family: cfg.heterogeneity.partition.family(),
            dataset: cfg.dataset.primary.canonical().unwrap_or(&cfg.dataset.primary.name).to_string(),
            k: cfg.heterogeneity.partition.cluster_count(),
            sparsity: cfg.heterogeneity.sparsity_label(),
            failed_stage: None,
            error: None,
        };
        match result {
            Ok(report) => outcome.reports.push(report),
            Err(e) => {
                log::warn!("suite: {} failed: {e}", entry.run_id);
                entry.failed_stage = Some(e.stage);
                entry.error = Some(e.to_string());
            }
        }
        outcome.entries.push(entry);
    }
    if let Some(dir) = &grid.output_dir {
        write_aggregate(dir, &outcome.reports)?;
        let p = dir.join("suite.json");
        let text = serde_json::to_string_pretty(&outcome.entries).map_err(|e| emit_err(&p, e))?;
        fs::write(&p, text).map_err(|e| emit_err(&p, e))?;
    }
    Ok(outcome)
}
