use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::train::{map_indexed, map_mut, mean, order_seed, run_epoch, train_pooled};
use super::{FederationError, LogRecord, Result, StrategyConfig, StrategyKind, TrainedOutcome};
use crate::heterogeneity::ClientShard;
use crate::nn::{average_params, mean_loss, Architecture, Example, ModelParams, OptimizerState};
use crate::seed;

/// Training context: the client shards, the backbone and the run seed.
#[derive(Debug, Clone)]
pub struct Federation<'a> {
    shards: &'a [ClientShard],
    base: Architecture,
    seed: u64,
    parallel: bool,
}

struct ClientState {
    params: ModelParams,
    opt: OptimizerState,
}

impl<'a> Federation<'a> {
    /// `arch` may be either variant; strategies pick the one they need.
    pub fn new(shards: &'a [ClientShard], arch: &Architecture, run_seed: u64) -> Result<Self> {
        if let Some(s) = shards.iter().find(|s| s.train.is_empty()) {
            return Err(FederationError::EmptyTrain(s.client_id));
        }
        if shards.is_empty() {
            return Err(FederationError::Invalid("no clients".into()));
        }
        Ok(Self {
            shards,
            base: arch.conditioned(None)?,
            seed: run_seed,
            parallel: false,
        })
    }

    /// Lets client jobs inside a round run on the rayon pool.
    pub fn parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn base_arch(&self) -> &Architecture {
        &self.base
    }

    /// Initialization `k`; every strategy's first model uses `k = 0`.
    pub fn init(&self, arch: &Architecture, k: usize) -> ModelParams {
        ModelParams::init(arch, seed::derive(self.seed, &[seed::tag::INIT, k as u64]))
    }

    fn train_examples(&self, i: usize, conditional: bool) -> Vec<Example<'a>> {
        let s = &self.shards[i];
        let stats = if conditional {
            s.stats.as_ref().map(|v| v.as_slice())
        } else {
            None
        };
        s.train.iter().map(|x| Example { x: &x.x, stats, y: x.y }).collect()
    }

    fn all_examples(&self) -> Vec<Vec<Example<'a>>> {
        (0..self.shards.len()).map(|i| self.train_examples(i, false)).collect()
    }

    fn outcome(&self, kind: StrategyKind, models: Vec<ModelParams>, client_model: Vec<usize>, log: Vec<LogRecord>) -> TrainedOutcome {
        TrainedOutcome {
            strategy: kind,
            arch: self.base.clone(),
            models,
            client_model,
            conditional: false,
            assignments: None,
            mixing_weights: None,
            log,
        }
    }

    /// Dispatches on `cfg.kind`; `true_k` is the ground-truth cluster count.
    pub fn train(&self, cfg: &StrategyConfig, true_k: usize) -> Result<TrainedOutcome> {
        cfg.validate()?;
        match cfg.kind {
            StrategyKind::Conditional => self.train_conditional(cfg),
            StrategyKind::Local => self.train_local(cfg),
            StrategyKind::Fedavg => self.train_fedavg(cfg),
            StrategyKind::Gossip => self.train_gossip(cfg),
            StrategyKind::Oracle => self.train_oracle(cfg),
            StrategyKind::Ifca => self.train_ifca(cfg, cfg.k_hypotheses.unwrap_or(true_k)),
            StrategyKind::Dac => self.train_dac(cfg),
            StrategyKind::Ditto => self.train_ditto(cfg),
        }
    }

    /// One shared conditional model trained on the pooled `(x, s_i, y)` set.
    pub fn train_conditional(&self, cfg: &StrategyConfig) -> Result<TrainedOutcome> {
        let mut l = None;
        for s in self.shards {
            let stats = s.stats.as_ref().ok_or(FederationError::MissingStats(s.client_id))?;
            let expected = *l.get_or_insert(stats.l());
            if stats.l() != expected || expected == 0 {
                return Err(FederationError::StatsDim {
                    client: s.client_id,
                    expected,
                    actual: stats.l(),
                });
            }
        }
        let arch = self.base.conditioned(l)?;
        let pool: Vec<Example> = (0..self.shards.len())
            .flat_map(|i| self.train_examples(i, true))
            .collect();
        let (model, losses) = train_pooled(&self.init(&arch, 0), &arch, &pool, cfg.sgd, cfg.epochs, self.seed, 0)?;
        let log = epoch_log(StrategyKind::Conditional, &losses);
        Ok(TrainedOutcome {
            arch,
            conditional: true,
            ..self.outcome(StrategyKind::Conditional, vec![model], vec![0; self.shards.len()], log)
        })
    }

    fn local_round(
        &self,
        states: &mut [ClientState],
        examples: &[Vec<Example>],
        cfg: &StrategyConfig,
        round: usize,
        prox: Option<(&ModelParams, f64)>,
    ) -> Result<Vec<f64>> {
        let le = cfg.local_epochs_per_round;
        map_mut(states, self.parallel, |i, st| {
            let mut last = 0.0;
            for e in 0..le {
                let order = order_seed(self.seed, i, round * le + e);
                last = run_epoch(&mut st.params, &mut st.opt, &self.base, &examples[i], order, prox)?;
            }
            Ok(last)
        })
    }

    /// Per-client models from the common init, with optimizers that
    /// persist across rounds.
    fn persistent_states(&self, cfg: &StrategyConfig) -> Vec<ClientState> {
        let init = self.init(&self.base, 0);
        (0..self.shards.len())
            .map(|_| ClientState {
                opt: cfg.sgd.state_for(&init),
                params: init.clone(),
            })
            .collect()
    }

    fn finish_states(&self, kind: StrategyKind, states: Vec<ClientState>, log: Vec<LogRecord>) -> TrainedOutcome {
        let n = states.len();
        self.outcome(kind, states.into_iter().map(|s| s.params).collect(), (0..n).collect(), log)
    }

    /// Each client trains alone, keeping its optimizer across rounds.
    pub fn train_local(&self, cfg: &StrategyConfig) -> Result<TrainedOutcome> {
        let examples = self.all_examples();
        let mut states = self.persistent_states(cfg);
        let mut log = Vec::new();
        for r in 0..cfg.rounds() {
            let losses = self.local_round(&mut states, &examples, cfg, r, None)?;
            log.push(record(r, StrategyKind::Local, &losses));
        }
        Ok(self.finish_states(StrategyKind::Local, states, log))
    }

    /// One FedAvg round over `members`: local passes from `global` with
    /// fresh optimizers, then the sample-weighted mean in member order.
    fn fedavg_round(
        &self,
        global: &ModelParams,
        members: &[usize],
        examples: &[Vec<Example>],
        cfg: &StrategyConfig,
        round: usize,
    ) -> Result<(ModelParams, Vec<f64>)> {
        let le = cfg.local_epochs_per_round;
        let trained = map_indexed(members.len(), self.parallel, |m| {
            let i = members[m];
            let mut params = global.clone();
            let mut opt = cfg.sgd.state_for(&params);
            let mut last = 0.0;
            for e in 0..le {
                let order = order_seed(self.seed, i, round * le + e);
                last = run_epoch(&mut params, &mut opt, &self.base, &examples[i], order, None)?;
            }
            Ok((params, last))
        })?;
        let refs: Vec<&ModelParams> = trained.iter().map(|(p, _)| p).collect();
        let weights: Vec<f64> = members.iter().map(|&i| self.shards[i].train.len() as f64).collect();
        let avg = average_params(&refs, &weights)?;
        Ok((avg, trained.iter().map(|(_, l)| *l).collect()))
    }

    pub fn train_fedavg(&self, cfg: &StrategyConfig) -> Result<TrainedOutcome> {
        let examples = self.all_examples();
        let everyone: Vec<usize> = (0..self.shards.len()).collect();
        let mut global = self.init(&self.base, 0);
        let mut log = Vec::new();
        for r in 0..cfg.rounds() {
            let (next, losses) = self.fedavg_round(&global, &everyone, &examples, cfg, r)?;
            global = next;
            log.push(record(r, StrategyKind::Fedavg, &losses));
        }
        Ok(self.outcome(StrategyKind::Fedavg, vec![global], vec![0; everyone.len()], log))
    }

    /// Local passes, then a seeded random matching; the first
    /// `gossip_pairs_per_round` pairs replace both models by their mean.
    pub fn train_gossip(&self, cfg: &StrategyConfig) -> Result<TrainedOutcome> {
        let examples = self.all_examples();
        let mut states = self.persistent_states(cfg);
        let mut log = Vec::new();
        let n = states.len();
        for r in 0..cfg.rounds() {
            let losses = self.local_round(&mut states, &examples, cfg, r, None)?;
            log.push(record(r, StrategyKind::Gossip, &losses));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut seed::stream(self.seed, &[seed::tag::GOSSIP, r as u64]));
            let pairs = cfg.gossip_pairs_per_round.unwrap_or(n / 2).min(n / 2);
            for pair in order.chunks_exact(2).take(pairs) {
                let (a, b) = (pair[0], pair[1]);
                let mixed = average_params(&[&states[a].params, &states[b].params], &[1.0, 1.0])?;
                states[a].params = mixed.clone();
                states[b].params = mixed;
            }
        }
        Ok(self.finish_states(StrategyKind::Gossip, states, log))
    }

    /// One pooled model per ground-truth cluster.
    pub fn train_oracle(&self, cfg: &StrategyConfig) -> Result<TrainedOutcome> {
        let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.shards.iter().enumerate() {
            clusters.entry(s.cluster_id).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = clusters.into_values().collect();
        let init = self.init(&self.base, 0);
        let trained = map_indexed(groups.len(), self.parallel, |k| {
            let pool: Vec<Example> = groups[k].iter().flat_map(|&i| self.train_examples(i, false)).collect();
            train_pooled(&init, &self.base, &pool, cfg.sgd, cfg.epochs, self.seed, k)
        })?;
        let mut client_model = vec![0; self.shards.len()];
        for (k, members) in groups.iter().enumerate() {
            for &i in members {
                client_model[i] = k;
            }
        }
        let per_epoch: Vec<Vec<f64>> = trained.iter().map(|(_, l)| l.clone()).collect();
        let log = (0..cfg.epochs)
            .map(|e| record(e, StrategyKind::Oracle, &per_epoch.iter().map(|l| l[e]).collect::<Vec<_>>()))
            .collect();
        Ok(self.outcome(StrategyKind::Oracle, trained.into_iter().map(|(m, _)| m).collect(), client_model, log))
    }

    /// Each client's argmin-loss hypothesis; ties go to the lowest index.
    pub fn ifca_e_step(&self, models: &[ModelParams]) -> Result<Vec<usize>> {
        let examples = self.all_examples();
        map_indexed(self.shards.len(), self.parallel, |i| {
            let mut best = (0, f64::INFINITY);
            for (k, m) in models.iter().enumerate() {
                let loss = mean_loss(m, &self.base, &examples[i])?;
                if loss < best.1 {
                    best = (k, loss);
                }
            }
            Ok(best.0)
        })
    }

    /// `k` hypotheses from distinct inits. The E-step runs in the first
    /// `ifca_refinement_rounds` rounds (at least one), after which
    /// assignments are frozen. Empty hypotheses keep their parameters.
    pub fn train_ifca(&self, cfg: &StrategyConfig, k: usize) -> Result<TrainedOutcome> {
        if k == 0 {
            return Err(FederationError::Invalid("IFCA needs at least one hypothesis".into()));
        }
        let examples = self.all_examples();
        let mut models: Vec<ModelParams> = (0..k).map(|h| self.init(&self.base, h)).collect();
        let mut assign = vec![0; self.shards.len()];
        let mut log = Vec::new();
        for r in 0..cfg.rounds() {
            if r < cfg.ifca_refinement_rounds.max(1) {
                assign = self.ifca_e_step(&models)?;
            }
            let mut losses = Vec::new();
            for (h, model) in models.iter_mut().enumerate() {
                let members: Vec<usize> = (0..assign.len()).filter(|&i| assign[i] == h).collect();
                if members.is_empty() {
                    continue;
                }
                let (next, l) = self.fedavg_round(model, &members, &examples, cfg, r)?;
                *model = next;
                losses.extend(l);
            }
            log.push(record(r, StrategyKind::Ifca, &losses));
        }
        Ok(TrainedOutcome {
            assignments: Some(assign.clone()),
            ..self.outcome(StrategyKind::Ifca, models, assign, log)
        })
    }

    /// Local passes, then every client takes the softmax(cos / tau)-weighted
    /// mean of all models, itself included. Mixing is synchronous.
    pub fn train_dac(&self, cfg: &StrategyConfig) -> Result<TrainedOutcome> {
        let examples = self.all_examples();
        let mut states = self.persistent_states(cfg);
        let mut log = Vec::new();
        let mut weights = Vec::new();
        for r in 0..cfg.rounds() {
            let losses = self.local_round(&mut states, &examples, cfg, r, None)?;
            log.push(record(r, StrategyKind::Dac, &losses));
            let models: Vec<&ModelParams> = states.iter().map(|s| &s.params).collect();
            weights = dac_weights(&models, cfg.dac_temperature)?;
            let mixed = map_indexed(models.len(), self.parallel, |i| Ok(average_params(&models, &weights[i])?))?;
            for (st, m) in states.iter_mut().zip(mixed) {
                st.params = m;
            }
        }
        let assignments = weight_components(&weights);
        let mut out = self.finish_states(StrategyKind::Dac, states, log);
        out.assignments = Some(assignments);
        out.mixing_weights = Some(weights);
        Ok(out)
    }

    /// FedAvg global model plus personal models; after each personal step
    /// the personal model takes the exact proximal step toward the global
    /// model just aggregated this round. Clients predict with personal models.
    pub fn train_ditto(&self, cfg: &StrategyConfig) -> Result<TrainedOutcome> {
        let examples = self.all_examples();
        let everyone: Vec<usize> = (0..self.shards.len()).collect();
        let mut global = self.init(&self.base, 0);
        let mut personal = self.persistent_states(cfg);
        let mut log = Vec::new();
        for r in 0..cfg.rounds() {
            global = self.fedavg_round(&global, &everyone, &examples, cfg, r)?.0;
            let losses = self.local_round(&mut personal, &examples, cfg, r, Some((&global, cfg.ditto_lambda)))?;
            log.push(record(r, StrategyKind::Ditto, &losses));
        }
        Ok(self.finish_states(StrategyKind::Ditto, personal, log))
    }
}

fn record(round: usize, strategy: StrategyKind, losses: &[f64]) -> LogRecord {
    LogRecord {
        round,
        strategy,
        mean_train_loss: mean(losses),
    }
}

fn epoch_log(kind: StrategyKind, losses: &[f64]) -> Vec<LogRecord> {
    losses.iter().enumerate().map(|(e, &l)| record(e, kind, &[l])).collect()
}

/// Row-stochastic DAC weights. A zero-norm model has similarity 0 to all.
pub(crate) fn dac_weights(models: &[&ModelParams], temperature: f64) -> Result<Vec<Vec<f64>>> {
    let n = models.len();
    let mut sim = vec![vec![0.0; n]; n];
    let mut warned = false;
    for i in 0..n {
        for j in i..n {
            let c = match models[i].cosine(models[j])? {
                Some(c) => c,
                None => {
                    if !warned {
                        log::warn!("zero-norm model in DAC mixing; treating its similarity as 0");
                        warned = true;
                    }
                    0.0
                }
            };
            sim[i][j] = c;
            sim[j][i] = c;
        }
    }
    Ok(sim
        .into_iter()
        .map(|row| {
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|s| ((s - top) / temperature).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect())
}

/// Clusters are the connected components of mutual above-uniform peer
/// weight: self-weight is dropped, each row renormalized over the other
/// `n - 1` clients, and `i ~ j` when both directions exceed `1 / (n - 1)`.
/// Components are numbered by first member.
pub(crate) fn weight_components(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    let peer = |i: usize, j: usize| {
        let rest = 1.0 - weights[i][i];
        if rest > 0.0 {
            weights[i][j] / rest
        } else {
            0.0
        }
    };
    let uniform = 1.0 / (n.max(2) - 1) as f64;
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = next;
        while let Some(i) = stack.pop() {
            let joined: Vec<usize> = (0..n)
                .filter(|&j| j != i && label[j] == usize::MAX && peer(i, j) > uniform && peer(j, i) > uniform)
                .collect();
            for j in joined {
                label[j] = next;
                stack.push(j);
            }
        }
        next += 1;
    }
    label
}
