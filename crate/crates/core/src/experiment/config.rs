use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result, Stage};
use crate::datasets::ExtractorKind;
use crate::federation::{StrategyConfig, StrategyKind};
use crate::heterogeneity::{PartitionSpec, SparsityLevel};
use crate::stats::{PcaSolver, DEFAULT_STATS_DIM};

/// Environment variable naming the dataset root directory.
pub const DATA_ROOT_ENV: &str = "FEDCOND_DATA_ROOT";

/// Desk-scale defaults.
pub const DEFAULT_PER_CLASS_CAP: usize = 1000;
pub const DEFAULT_EPOCHS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(default = "ten")]
    pub classes: usize,
    #[serde(default = "sixteen")]
    pub dim: usize,
    #[serde(default = "two_hundred")]
    pub train_per_class: usize,
    #[serde(default = "fifty")]
    pub test_per_class: usize,
    #[serde(default = "half")]
    pub scale: f64,
}

fn ten() -> usize {
    10
}
fn sixteen() -> usize {
    16
}
fn two_hundred() -> usize {
    200
}
fn fifty() -> usize {
    50
}
fn half() -> f64 {
    0.5
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: ten(),
            dim: sixteen(),
            train_per_class: two_hundred(),
            test_per_class: fifty(),
            scale: half(),
        }
    }
}

/// `mnist`, `fashion-mnist` (alias `fmnist`) or `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    /// Directory holding the four IDX files; `<root>/<name>` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

impl DatasetRef {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            path: None,
            synthetic: None,
        }
    }

    /// Canonical name, or `None` for an unknown dataset.
    pub fn canonical(&self) -> Option<&'static str> {
        match self.name.to_ascii_lowercase().as_str() {
            "mnist" => Some("mnist"),
            "fashion-mnist" | "fashion_mnist" | "fmnist" => Some("fashion-mnist"),
            "synthetic" => Some("synthetic"),
            _ => None,
        }
    }

    pub fn resolve_dir(&self, root: &Path) -> PathBuf {
        self.path
            .clone()
            .unwrap_or_else(|| root.join(self.canonical().unwrap_or(&self.name)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub primary: DatasetRef,
    /// Samples kept per class in each split; 0 keeps everything.
    #[serde(default = "default_cap")]
    pub per_class_cap: usize,
    /// Second source for domain shift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<DatasetRef>,
}

fn default_cap() -> usize {
    DEFAULT_PER_CLASS_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneitySpec {
    #[serde(flatten)]
    pub partition: PartitionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparsity: Option<SparsityLevel>,
    /// Overrides `sparsity` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clients_per_cluster: Option<usize>,
}

impl HeterogeneitySpec {
    pub fn clients_per_cluster(&self) -> usize {
        self.clients_per_cluster
            .unwrap_or_else(|| self.sparsity.unwrap_or(SparsityLevel::Rich).clients_per_cluster())
    }

    /// Level name, or `cpc<N>` for a custom client count.
    pub fn sparsity_label(&self) -> String {
        match (self.clients_per_cluster, self.sparsity) {
            (Some(n), _) => format!("cpc{n}"),
            (None, level) => level.unwrap_or(SparsityLevel::Rich).to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSpec {
    #[serde(default = "default_l")]
    pub l: usize,
    #[serde(default)]
    pub extractor: ExtractorKind,
    #[serde(default)]
    pub solver: PcaSolver,
}

fn default_l() -> usize {
    DEFAULT_STATS_DIM
}

impl Default for StatsSpec {
    fn default() -> Self {
        Self {
            l: default_l(),
            extractor: ExtractorKind::Identity,
            solver: PcaSolver::Iterative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub architecture: Backbone,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    /// CNN channel counts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv_channels: Option<[usize; 2]>,
}

fn default_hidden() -> usize {
    128
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            architecture: Backbone::Mlp,
            hidden_dim: default_hidden(),
            conv_channels: None,
        }
    }
}

/// Hyperparameters; every field is optional so the same shape serves as
/// run-wide defaults and per-strategy overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_epochs_per_round: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hypotheses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ditto_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ifca_refinement_rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gossip_pairs_per_round: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dac_temperature: Option<f64>,
}

impl TrainingSpec {
    fn apply(&self, c: &mut StrategyConfig) {
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set! {
            epochs => c.epochs,
            local_epochs_per_round => c.local_epochs_per_round,
            learning_rate => c.sgd.learning_rate,
            momentum => c.sgd.momentum,
            batch_size => c.sgd.batch_size,
            ditto_lambda => c.ditto_lambda,
            ifca_refinement_rounds => c.ifca_refinement_rounds,
            dac_temperature => c.dac_temperature,
        }
        if self.rounds.is_some() {
            c.rounds = self.rounds;
        }
        if self.k_hypotheses.is_some() {
            c.k_hypotheses = self.k_hypotheses;
        }
        if self.gossip_pairs_per_round.is_some() {
            c.gossip_pairs_per_round = self.gossip_pairs_per_round;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub heterogeneity: HeterogeneitySpec,
    #[serde(default)]
    pub stats: StatsSpec,
    #[serde(default)]
    pub model: ModelSpec,
    pub strategies: Vec<StrategyKind>,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<StrategyKind, TrainingSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(ExperimentError::at(Stage::Config))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::msg(Stage::Config, format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(ExperimentError::at(Stage::Config))
    }

    /// Fully resolved hyperparameters for one strategy.
    pub fn strategy_config(&self, kind: StrategyKind) -> StrategyConfig {
        let mut c = StrategyConfig::new(kind).with_epochs(DEFAULT_EPOCHS);
        self.training.apply(&mut c);
        if let Some(o) = self.overrides.get(&kind) {
            o.apply(&mut c);
        }
        c
    }

    pub fn run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| {
            format!(
                "{}-{}-k{}-{}-s{}",
                self.heterogeneity.partition.family(),
                self.dataset.primary.canonical().unwrap_or(&self.dataset.primary.name),
                self.heterogeneity.partition.cluster_count(),
                self.heterogeneity.sparsity_label(),
                self.seed
            )
        })
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ExperimentError::msg(Stage::Config, m));
        if self.strategies.is_empty() {
            return fail("strategy list is empty".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.strategies.iter().find(|k| !seen.insert(**k)) {
            return fail(format!("strategy {dup} listed twice"));
        }
        for r in std::iter::once(&self.dataset.primary).chain(&self.dataset.second) {
            if r.canonical().is_none() {
                return fail(format!("unknown dataset {:?}", r.name));
            }
        }
        if self.heterogeneity.partition.needs_second_dataset() != self.dataset.second.is_some() {
            return fail(format!(
                "family {} {} a second dataset",
                self.heterogeneity.partition.family(),
                if self.dataset.second.is_some() { "does not take" } else { "needs" }
            ));
        }
        if self.heterogeneity.clients_per_cluster() == 0 {
            return fail("clients_per_cluster must be >= 1".into());
        }
        if self.stats.l == 0 {
            return fail("stats.l must be >= 1".into());
        }
        if self.model.architecture == Backbone::Cnn && self.dataset.primary.canonical() == Some("synthetic") {
            return fail("the CNN backbone needs 28x28 images".into());
        }
        for kind in &self.strategies {
            self.strategy_config(*kind)
                .validate()
                .map_err(ExperimentError::at(Stage::Config))?;
        }
        Ok(())
    }
}
