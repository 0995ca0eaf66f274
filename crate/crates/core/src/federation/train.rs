use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::Result;
use crate::nn::{loss_and_grad, Architecture, Example, ModelParams, OptimizerState};
use crate::seed;

/// Shuffle stream for `slot` at epoch index `epoch`.
pub(crate) fn order_seed(run_seed: u64, slot: usize, epoch: usize) -> u64 {
    seed::derive(run_seed, &[seed::tag::SHUFFLE, slot as u64, epoch as u64])
}

/// One shuffled pass of minibatch SGD; returns the mean pre-step batch loss.
///
/// With `prox = Some((anchor, lambda))` every step is followed by the exact
/// proximal map of `(lambda / 2) ||theta - anchor||^2` at the step size.
pub fn run_epoch(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    arch: &Architecture,
    examples: &[Example],
    shuffle_seed: u64,
    prox: Option<(&ModelParams, f64)>,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut seed::rng(shuffle_seed));
    let mut batch = Vec::with_capacity(opt.batch_size);
    let mut total = 0.0;
    for chunk in order.chunks(opt.batch_size) {
        batch.clear();
        batch.extend(chunk.iter().map(|&i| examples[i]));
        let (loss, grad) = loss_and_grad(params, arch, &batch)?;
        opt.step(params, &grad)?;
        if let Some((anchor, lambda)) = prox {
            params.pull_toward(anchor, opt.learning_rate * lambda)?;
        }
        total += loss * chunk.len() as f64;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Centralized training on one example list: `epochs` passes from `init`
/// with a fresh optimizer, shuffled by `slot`'s stream. Returns the model
/// and the mean loss of every epoch.
pub fn train_pooled(
    init: &ModelParams,
    arch: &Architecture,
    examples: &[Example],
    sgd: crate::nn::SgdConfig,
    epochs: usize,
    run_seed: u64,
    slot: usize,
) -> Result<(ModelParams, Vec<f64>)> {
    let mut params = init.clone();
    let mut opt = sgd.state_for(&params);
    let losses = (0..epochs)
        .map(|e| run_epoch(&mut params, &mut opt, arch, examples, order_seed(run_seed, slot, e), None))
        .collect::<Result<Vec<_>>>()?;
    Ok((params, losses))
}

/// Runs `f` on every state, in parallel when asked; results keep index order.
pub(crate) fn map_mut<S, T, F>(states: &mut [S], parallel: bool, f: F) -> Result<Vec<T>>
where
    S: Send,
    T: Send,
    F: Fn(usize, &mut S) -> Result<T> + Sync + Send,
{
    if parallel {
        states.par_iter_mut().enumerate().map(|(i, s)| f(i, s)).collect()
    } else {
        states.iter_mut().enumerate().map(|(i, s)| f(i, s)).collect()
    }
}

pub(crate) fn map_indexed<T, F>(n: usize, parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}
