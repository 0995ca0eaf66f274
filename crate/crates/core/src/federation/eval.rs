use super::train::{map_indexed, mean};
use super::{FederationError, Result, TrainedOutcome};
use crate::heterogeneity::ClientShard;
use crate::nn::{predict, Example};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub per_client: Vec<f64>,
    /// Unweighted mean over clients.
    pub mean: f64,
}

/// Fraction of positions where `predicted` equals `labels`.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Test accuracy of every client with its own prediction function.
pub fn evaluate(outcome: &TrainedOutcome, shards: &[ClientShard], parallel: bool) -> Result<Evaluation> {
    if outcome.client_model.len() != shards.len() {
        return Err(FederationError::Coverage {
            covered: outcome.client_model.len(),
            clients: shards.len(),
        });
    }
    let per_client = map_indexed(shards.len(), parallel, |i| {
        let s = &shards[i];
        if s.test.is_empty() {
            return Err(FederationError::EmptyTest(s.client_id));
        }
        let stats = if outcome.conditional {
            Some(s.stats.as_ref().ok_or(FederationError::MissingStats(s.client_id))?.as_slice())
        } else {
            None
        };
        let examples: Vec<Example> = s.test.iter().map(|x| Example { x: &x.x, stats, y: x.y }).collect();
        let labels: Vec<usize> = s.test.iter().map(|x| x.y).collect();
        Ok(accuracy(&predict(outcome.model_for(i), &outcome.arch, &examples)?, &labels))
    })?;
    let mean = mean(&per_client);
    Ok(Evaluation { per_client, mean })
}
