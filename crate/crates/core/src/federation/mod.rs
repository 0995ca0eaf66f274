//! Training strategies over client shards, and per-client evaluation.
//!
//! Every strategy starts from the same seeded initialization, and the data
//! order of each epoch comes from a stream keyed by (slot, epoch index), where
//! the slot is a client for per-client work and a model for pooled work.
//! Client jobs inside a round may run on the rayon pool; results are gathered
//! in client order, so the outcome does not depend on the thread count.

mod eval;
mod strategies;
mod train;

pub use eval::{accuracy, evaluate, Evaluation};
pub use strategies::Federation;
pub use train::{run_epoch, train_pooled};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Architecture, ModelParams, NnError, SgdConfig};

#[derive(Debug, Error)]
pub enum FederationError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("client {0} has no fingerprint")]
    MissingStats(usize),
    #[error("client {client} fingerprint has length {actual}, expected {expected}")]
    StatsDim {
        client: usize,
        expected: usize,
        actual: usize,
    },
    #[error("client {0} has an empty test shard")]
    EmptyTest(usize),
    #[error("client {0} has an empty train shard")]
    EmptyTrain(usize),
    #[error("outcome covers {covered} clients, shards hold {clients}")]
    Coverage { covered: usize, clients: usize },
    #[error("invalid strategy config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, FederationError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Conditional,
    Local,
    Fedavg,
    Gossip,
    Oracle,
    Ifca,
    Dac,
    Ditto,
}

impl StrategyKind {
    pub const ALL: [Self; 8] = [
        Self::Conditional,
        Self::Local,
        Self::Fedavg,
        Self::Gossip,
        Self::Oracle,
        Self::Ifca,
        Self::Dac,
        Self::Ditto,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Conditional => "conditional",
            Self::Local => "local",
            Self::Fedavg => "fedavg",
            Self::Gossip => "gossip",
            Self::Oracle => "oracle",
            Self::Ifca => "ifca",
            Self::Dac => "dac",
            Self::Ditto => "ditto",
        }
    }

    /// Strategies that estimate a client clustering.
    pub fn clusters(self) -> bool {
        matches!(self, Self::Ifca | Self::Dac)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = FederationError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| FederationError::Invalid(format!("unknown strategy {s:?}")))
    }
}

fn default_epochs() -> usize {
    20
}
fn default_one() -> usize {
    1
}
fn default_lambda() -> f64 {
    1.0
}
fn default_refinement() -> usize {
    5
}
fn default_temperature() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Passes over the pooled data for pooled strategies.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Federated rounds; `epochs / local_epochs_per_round` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default = "default_one")]
    pub local_epochs_per_round: usize,
    /// IFCA hypotheses; the true cluster count when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hypotheses: Option<usize>,
    #[serde(default = "default_lambda")]
    pub ditto_lambda: f64,
    #[serde(default = "default_refinement")]
    pub ifca_refinement_rounds: usize,
    /// Matched pairs averaged per round; the whole matching when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gossip_pairs_per_round: Option<usize>,
    #[serde(default = "default_temperature")]
    pub dac_temperature: f64,
    #[serde(default)]
    pub sgd: SgdConfig,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            epochs: default_epochs(),
            rounds: None,
            local_epochs_per_round: 1,
            k_hypotheses: None,
            ditto_lambda: default_lambda(),
            ifca_refinement_rounds: default_refinement(),
            gossip_pairs_per_round: None,
            dac_temperature: default_temperature(),
            sgd: SgdConfig::default(),
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn rounds(&self) -> usize {
        self.rounds
            .unwrap_or_else(|| (self.epochs / self.local_epochs_per_round.max(1)).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FederationError::Invalid(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.local_epochs_per_round == 0 || self.rounds == Some(0) {
            return bad("rounds and local_epochs_per_round must be >= 1");
        }
        if !(self.ditto_lambda >= 0.0) || !self.ditto_lambda.is_finite() {
            return bad("ditto_lambda must be a finite value >= 0");
        }
        if self.k_hypotheses == Some(0) {
            return bad("k_hypotheses must be >= 1");
        }
        if !(self.dac_temperature > 0.0) {
            return bad("dac_temperature must be > 0");
        }
        if !(self.sgd.learning_rate > 0.0) || !(0.0..1.0).contains(&self.sgd.momentum) || self.sgd.batch_size == 0 {
            return bad("sgd needs learning_rate > 0, momentum in [0, 1), batch_size >= 1");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    pub strategy: StrategyKind,
    pub mean_train_loss: f64,
}

/// Trained models and which one each client predicts with.
#[derive(Debug, Clone)]
pub struct TrainedOutcome {
    pub strategy: StrategyKind,
    pub arch: Architecture,
    pub models: Vec<ModelParams>,
    /// Model index per client.
    pub client_model: Vec<usize>,
    /// Whether prediction feeds the client fingerprint.
    pub conditional: bool,
    /// Estimated cluster per client (IFCA, DAC).
    pub assignments: Option<Vec<usize>>,
    /// Final mixing weights per client (DAC).
    pub mixing_weights: Option<Vec<Vec<f64>>>,
    pub log: Vec<LogRecord>,
}

impl TrainedOutcome {
    pub fn model_for(&self, client: usize) -> &ModelParams {
        &self.models[self.client_model[client]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_rounds() {
        let c: StrategyConfig = toml::from_str("kind = \"ditto\"").unwrap();
        assert_eq!(c, StrategyConfig::new(StrategyKind::Ditto));
        assert_eq!(c.rounds(), 20);
        let c = StrategyConfig { local_epochs_per_round: 4, ..c.with_epochs(10) };
        assert_eq!(c.rounds(), 2);
        assert!(c.validate().is_ok());
        let bad = StrategyConfig { ditto_lambda: -1.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kinds_parse() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("fedprox".parse::<StrategyKind>().is_err());
    }
}
