//! Federated rounds: aggregation, server optimizers, client sampling and
//! communication accounting.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episodes::Episode;
use crate::local_train::TrainError;
use crate::partition::{ClientId, PartitionManifest};
use crate::seed::{derive_rng, derive_seed};

/// A flat vector of trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self, FlError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FlError::NonFiniteDelta);
        }
        Ok(ParamVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l2(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ParamVector) {
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|x| a * x).collect())
    }

    fn same_dim(&self, dim: usize) -> Result<(), FlError> {
        if self.dim() == dim {
            Ok(())
        } else {
            Err(FlError::DimMismatch { expected: dim, got: self.dim() })
        }
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Self {
        p.0
    }
}

#[derive(Debug, Error)]
pub enum FlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("no client updates to aggregate")]
    EmptyUpdateSet,
    #[error("non-finite value in update")]
    NonFiniteDelta,
    #[error("client {0} sent no control delta")]
    MissingControlDelta(ClientId),
    #[error("need {need} clients per round, manifest has {have}")]
    InsufficientClients { need: usize, have: usize },
    #[error("client {0} has an empty shard")]
    EmptyShard(ClientId),
    #[error("episode {0} is in the manifest but not in the corpus")]
    UnknownEpisode(String),
    #[error("client {client}: {source}")]
    Trainer { client: ClientId, source: TrainError },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "FEDAVG")]
    FedAvg,
    #[serde(rename = "FEDPROX")]
    FedProx,
    #[serde(rename = "SCAFFOLD")]
    Scaffold,
    #[serde(rename = "FEDAVGM")]
    FedAvgM,
    #[serde(rename = "FEDADAM")]
    FedAdam,
    #[serde(rename = "FEDYOGI")]
    FedYogi,
    #[serde(rename = "FEDADAGRAD")]
    FedAdagrad,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::Scaffold,
        Algorithm::FedAvgM,
        Algorithm::FedAdam,
        Algorithm::FedYogi,
        Algorithm::FedAdagrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "FEDAVG",
            Algorithm::FedProx => "FEDPROX",
            Algorithm::Scaffold => "SCAFFOLD",
            Algorithm::FedAvgM => "FEDAVGM",
            Algorithm::FedAdam => "FEDADAM",
            Algorithm::FedYogi => "FEDYOGI",
            Algorithm::FedAdagrad => "FEDADAGRAD",
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Algorithm::FedAdam | Algorithm::FedYogi | Algorithm::FedAdagrad)
    }
}

/// What divides the first moment in the adaptive rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Preconditioner {
    /// `√v + τ` with `v` the tracked second moment.
    #[default]
    SecondMoment,
    /// `1 + τ`; `v` is left untouched.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub name: Algorithm,
    pub beta1: f64,
    pub beta2: f64,
    pub server_lr: f64,
    pub tau: f64,
    pub mu: f64,
    pub momentum_mix: f64,
    #[serde(default)]
    pub preconditioner: Preconditioner,
}

impl AlgoConfig {
    pub fn new(name: Algorithm) -> Self {
        AlgoConfig {
            name,
            beta1: 0.9,
            beta2: 0.999,
            server_lr: if name.is_adaptive() { 1e-3 } else { 1.0 },
            tau: 1e-6,
            mu: 0.2,
            momentum_mix: 0.9,
            preconditioner: Preconditioner::SecondMoment,
        }
    }

    pub fn validate(&self) -> Result<(), FlError> {
        let bad = |what: &str| Err(FlError::InvalidConfig(what.to_string()));
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.server_lr > 0.0) || !(self.tau > 0.0) {
            return bad("server_lr and tau must be positive");
        }
        if !(self.mu >= 0.0) {
            return bad("mu must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.momentum_mix) {
            return bad("momentum_mix must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: ClientId,
    pub delta: ParamVector,
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control_delta: Option<ParamVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Weighting {
    #[default]
    BySamples,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub total_rounds: u64,
    pub clients_per_round: usize,
    pub data_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub weighting: Weighting,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig { total_rounds: 30, clients_per_round: 3, data_fraction: 0.10, seed: 0, weighting: Weighting::BySamples }
    }
}

impl RoundConfig {
    pub fn validate(&self, num_clients: usize) -> Result<(), FlError> {
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(FlError::InvalidConfig(format!("data_fraction {} outside (0, 1]", self.data_fraction)));
        }
        if self.clients_per_round == 0 || self.clients_per_round > num_clients {
            return Err(FlError::InsufficientClients { need: self.clients_per_round, have: num_clients });
        }
        Ok(())
    }
}

/// Number of episodes drawn from a shard of `len` at `fraction`:
/// `⌈fraction·len⌉`, immune to representation error such as `0.1·70`.
pub fn sample_count(fraction: f64, len: usize) -> usize {
    let x = fraction * len as f64;
    let k = (x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize;
    k.min(len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub round: u64,
    pub params: ParamVector,
    pub momentum: ParamVector,
    pub second_moment: ParamVector,
    pub control: ParamVector,
    pub algo: AlgoConfig,
    /// SCAFFOLD per-client variates `c_i`, kept here so a checkpoint
    /// carries everything needed to resume.
    #[serde(default)]
    pub client_controls: BTreeMap<ClientId, ParamVector>,
}

impl ServerState {
    pub fn new(params: ParamVector, algo: AlgoConfig) -> Self {
        let dim = params.dim();
        ServerState {
            round: 0,
            params,
            momentum: ParamVector::zeros(dim),
            second_moment: ParamVector::zeros(dim),
            control: ParamVector::zeros(dim),
            algo,
            client_controls: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn client_control(&self, client: ClientId) -> ParamVector {
        self.client_controls.get(&client).cloned().unwrap_or_else(|| ParamVector::zeros(self.dim()))
    }
}

/// Weighted (or plain) mean of the client deltas.
pub fn aggregate(updates: &[ClientUpdate], weighting: Weighting) -> Result<ParamVector, FlError> {
    let first = updates.first().ok_or(FlError::EmptyUpdateSet)?;
    let dim = first.delta.dim();
    for u in updates {
        u.delta.same_dim(dim)?;
    }
    let weight = |u: &ClientUpdate| match weighting {
        Weighting::BySamples => u.num_samples as f64,
        Weighting::Uniform => 1.0,
    };
    let total: f64 = updates.iter().map(weight).sum();
    if total <= 0.0 {
        return Err(FlError::InvalidConfig("aggregation weights sum to zero".into()));
    }
    let mut out = ParamVector::zeros(dim);
    for u in updates {
        out.axpy(weight(u) / total, &u.delta);
    }
    if out.0.iter().any(|x| !x.is_finite()) {
        return Err(FlError::NonFiniteDelta);
    }
    Ok(out)
}

/// Applies one server update for the configured algorithm and advances the
/// round counter. The state is untouched on error.
pub fn server_step(state: &mut ServerState, delta: &ParamVector) -> Result<(), FlError> {
    delta.same_dim(state.dim())?;
    if delta.0.iter().any(|x| !x.is_finite()) {
        return Err(FlError::NonFiniteDelta);
    }
    let a = state.algo;
    let x = &mut state.params.0;
    let m = &mut state.momentum.0;
    let v = &mut state.second_moment.0;
    let unit = a.preconditioner == Preconditioner::Unit;
    match a.name {
        Algorithm::FedAvg | Algorithm::FedProx | Algorithm::Scaffold => {
            for (xi, d) in x.iter_mut().zip(&delta.0) {
                *xi += a.server_lr * d;
            }
        }
        Algorithm::FedAvgM => {
            for (xi, d) in x.iter_mut().zip(&delta.0) {
                *xi = a.momentum_mix * *xi + (1.0 - a.momentum_mix) * (*xi + d);
            }
        }
        Algorithm::FedAdagrad => {
            for i in 0..x.len() {
                let d = delta.0[i];
                let denom = if unit {
                    1.0 + a.tau
                } else {
                    v[i] += d * d;
                    v[i].sqrt() + a.tau
                };
                x[i] += a.server_lr * d / denom;
            }
        }
        Algorithm::FedAdam | Algorithm::FedYogi => {
            for i in 0..x.len() {
                let d = delta.0[i];
                m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * d;
                let denom = if unit {
                    1.0 + a.tau
                } else {
                    let d2 = d * d;
                    v[i] = if a.name == Algorithm::FedAdam {
                        a.beta2 * v[i] + (1.0 - a.beta2) * d2
                    } else {
                        v[i] - (1.0 - a.beta2) * d2 * sign(v[i] - d2)
                    };
                    v[i].sqrt() + a.tau
                };
                x[i] += a.server_lr * m[i] / denom;
            }
        }
    }
    state.round += 1;
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `c ← c + (|S|/N)·mean(control deltas)`.
pub fn scaffold_server_control(
    state: &mut ServerState,
    updates: &[ClientUpdate],
    num_total_clients: usize,
) -> Result<(), FlError> {
    if updates.is_empty() {
        return Err(FlError::EmptyUpdateSet);
    }
    let dim = state.dim();
    let mut mean = ParamVector::zeros(dim);
    for u in updates {
        let cd = u.control_delta.as_ref().ok_or(FlError::MissingControlDelta(u.client_id))?;
        cd.same_dim(dim)?;
        mean.axpy(1.0 / updates.len() as f64, cd);
    }
    let frac = updates.len() as f64 / num_total_clients as f64;
    state.control.axpy(frac, &mean);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    Full,
    Adapter,
}

/// Bytes one client uploads per round for a single parameter vector.
pub fn communication_bytes(dim: u64, bytes_per_param: u64, payload: Payload, adapter_dim: u64) -> u64 {
    match payload {
        Payload::Full => dim * bytes_per_param,
        Payload::Adapter => adapter_dim * bytes_per_param,
    }
}

/// Run-level contrast between full-model and adapter transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    pub dim: u64,
    pub adapter_dim: u64,
    pub bytes_per_param: u64,
    pub rounds: u64,
    pub clients_per_round: u64,
    /// Parameter vectors per upload (2 under SCAFFOLD).
    pub vectors_per_update: u64,
    pub full_bytes_per_client_round: u64,
    pub adapter_bytes_per_client_round: u64,
    pub full_bytes_total: u64,
    pub adapter_bytes_total: u64,
    pub adapter_to_full_ratio: f64,
}

impl CommLedger {
    pub fn new(
        dim: u64,
        adapter_dim: u64,
        bytes_per_param: u64,
        rounds: u64,
        clients_per_round: u64,
        algo: Algorithm,
    ) -> Result<Self, FlError> {
        if ![2, 4, 8].contains(&bytes_per_param) {
            return Err(FlError::InvalidConfig(format!("bytes_per_param must be 2, 4 or 8, got {bytes_per_param}")));
        }
        let vectors = if algo == Algorithm::Scaffold { 2 } else { 1 };
        let full = vectors * communication_bytes(dim, bytes_per_param, Payload::Full, adapter_dim);
        let adapter = vectors * communication_bytes(dim, bytes_per_param, Payload::Adapter, adapter_dim);
        let per_run = rounds * clients_per_round;
        Ok(CommLedger {
            dim,
            adapter_dim,
            bytes_per_param,
            rounds,
            clients_per_round,
            vectors_per_update: vectors,
            full_bytes_per_client_round: full,
            adapter_bytes_per_client_round: adapter,
            full_bytes_total: full * per_run,
            adapter_bytes_total: adapter * per_run,
            adapter_to_full_ratio: if full == 0 { 0.0 } else { adapter as f64 / full as f64 },
        })
    }
}

/// Algorithm-specific inputs to local training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlgoHooks {
    pub prox_mu: Option<f64>,
    pub scaffold: Option<ScaffoldHooks>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldHooks {
    pub c: ParamVector,
    pub c_i: ParamVector,
}

/// Anything that can turn a global model and a data sample into an update.
pub trait LocalTrainer: Sync {
    fn dim(&self) -> usize;

    fn train(
        &self,
        client_id: ClientId,
        global: &ParamVector,
        sample: &[&Episode],
        hooks: &AlgoHooks,
        seed: u64,
    ) -> Result<ClientUpdate, TrainError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u64,
    pub selected_clients: Vec<ClientId>,
    pub samples_per_client: Vec<usize>,
    pub payload_bytes: u64,
    pub delta_l2: f64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub payload: Payload,
    pub adapter_dim: u64,
    pub bytes_per_param: u64,
    /// Off by default so round logs are reproducible byte for byte.
    pub record_wall_time: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { payload: Payload::Full, adapter_dim: 0, bytes_per_param: 8, record_wall_time: false }
    }
}

/// Episodes addressable by id.
pub struct EpisodeIndex<'a>(HashMap<&'a str, &'a Episode>);

impl<'a> EpisodeIndex<'a> {
    pub fn new(episodes: &'a [Episode]) -> Self {
        EpisodeIndex(episodes.iter().map(|e| (e.episode_id.as_str(), e)).collect())
    }

    pub fn get(&self, id: &str) -> Result<&'a Episode, FlError> {
        self.0.get(id).copied().ok_or_else(|| FlError::UnknownEpisode(id.to_string()))
    }
}

/// Executes round `state.round + 1`: client sampling, parallel local
/// training, aggregation and the server update.
pub fn run_round(
    state: &mut ServerState,
    manifest: &PartitionManifest,
    corpus: &EpisodeIndex<'_>,
    trainer: &dyn LocalTrainer,
    rc: &RoundConfig,
    opts: &RunOptions,
) -> Result<RoundLog, FlError> {
    let started = Instant::now();
    let clients: Vec<ClientId> = manifest.shards.keys().copied().collect();
    rc.validate(clients.len())?;
    let t = state.round;

    let mut rng = derive_rng(rc.seed, "round/select", &[t]);
    let mut picked: Vec<usize> = index::sample(&mut rng, clients.len(), rc.clients_per_round).into_vec();
    picked.sort_unstable();
    let selected: Vec<ClientId> = picked.into_iter().map(|i| clients[i]).collect();

    let mut samples = Vec::with_capacity(selected.len());
    for &c in &selected {
        let shard = &manifest.shards[&c];
        if shard.is_empty() {
            return Err(FlError::EmptyShard(c));
        }
        let k = sample_count(rc.data_fraction, shard.len());
        let mut rng = derive_rng(rc.seed, "round/sample", &[t, u64::from(c)]);
        let mut idx = index::sample(&mut rng, shard.len(), k).into_vec();
        idx.sort_unstable();
        let eps = idx.into_iter().map(|i| corpus.get(&shard[i])).collect::<Result<Vec<_>, _>>()?;
        samples.push(eps);
    }

    let algo = state.algo;
    let hooks_for = |c: ClientId| AlgoHooks {
        prox_mu: (algo.name == Algorithm::FedProx).then_some(algo.mu),
        scaffold: (algo.name == Algorithm::Scaffold)
            .then(|| ScaffoldHooks { c: state.control.clone(), c_i: state.client_control(c) }),
    };
    let global = &state.params;
    let results: Vec<Result<ClientUpdate, FlError>> = selected
        .par_iter()
        .zip(samples.par_iter())
        .map(|(&c, eps)| {
            let seed = derive_seed(rc.seed, "round/train", &[t, u64::from(c)]);
            trainer
                .train(c, global, eps, &hooks_for(c), seed)
                .map_err(|source| FlError::Trainer { client: c, source })
        })
        .collect();
    let updates = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let agg = aggregate(&updates, rc.weighting)?;
    let mut next = state.clone();
    server_step(&mut next, &agg)?;
    if algo.name == Algorithm::Scaffold {
        scaffold_server_control(&mut next, &updates, clients.len())?;
        for u in &updates {
            let cd = u.control_delta.as_ref().ok_or(FlError::MissingControlDelta(u.client_id))?;
            let mut ci = state.client_control(u.client_id);
            ci.axpy(1.0, cd);
            next.client_controls.insert(u.client_id, ci);
        }
    }
    *state = next;

    let vectors = if algo.name == Algorithm::Scaffold { 2 } else { 1 };
    let per_client =
        vectors * communication_bytes(agg.dim() as u64, opts.bytes_per_param, opts.payload, opts.adapter_dim);
    Ok(RoundLog {
        round: t + 1,
        selected_clients: selected,
        samples_per_client: samples.iter().map(Vec::len).collect(),
        payload_bytes: per_client * updates.len() as u64,
        delta_l2: agg.l2(),
        wall_time_ms: if opts.record_wall_time { started.elapsed().as_millis() as u64 } else { 0 },
    })
}

/// Runs rounds until `rc.total_rounds` is reached, calling `on_round` after
/// each one (for logging and checkpointing).
pub fn run_rounds<E: From<FlError>>(
    state: &mut ServerState,
    manifest: &PartitionManifest,
    corpus: &EpisodeIndex<'_>,
    trainer: &dyn LocalTrainer,
    rc: &RoundConfig,
    opts: &RunOptions,
    mut on_round: impl FnMut(&ServerState, &RoundLog) -> Result<(), E>,
) -> Result<(), E> {
    while state.round < rc.total_rounds {
        let log = run_round(state, manifest, corpus, trainer, rc, opts)?;
        on_round(state, &log)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(id: ClientId, delta: Vec<f64>, n: usize) -> ClientUpdate {
        ClientUpdate { client_id: id, delta: ParamVector(delta), num_samples: n, control_delta: None }
    }

    #[test]
    fn weighted_mean() {
        let u = [upd(0, vec![1.0], 1), upd(1, vec![3.0], 3)];
        assert_eq!(aggregate(&u, Weighting::BySamples).unwrap().0, vec![2.5]);
        assert_eq!(aggregate(&u, Weighting::Uniform).unwrap().0, vec![2.0]);
        assert_eq!(aggregate(&u[..1], Weighting::BySamples).unwrap().0, vec![1.0]);
        assert!(matches!(aggregate(&[], Weighting::Uniform), Err(FlError::EmptyUpdateSet)));
        let bad = [upd(0, vec![1.0], 1), upd(1, vec![1.0, 2.0], 1)];
        assert!(matches!(aggregate(&bad, Weighting::Uniform), Err(FlError::DimMismatch { .. })));
    }

    #[test]
    fn fedavg_unit_step() {
        let mut s = ServerState::new(ParamVector(vec![0.0]), AlgoConfig::new(Algorithm::FedAvg));
        server_step(&mut s, &ParamVector(vec![1.0])).unwrap();
        assert_eq!(s.params.0, vec![1.0]);
        assert_eq!(s.round, 1);
    }

    #[test]
    fn fedavgm_interpolates() {
        let mut s = ServerState::new(ParamVector(vec![2.0]), AlgoConfig::new(Algorithm::FedAvgM));
        server_step(&mut s, &ParamVector(vec![1.0])).unwrap();
        assert!((s.params.0[0] - 2.1).abs() < 1e-15);
        assert!(s.momentum.is_zero() && s.second_moment.is_zero());
    }

    #[test]
    fn fedadam_first_step() {
        let mut s = ServerState::new(ParamVector(vec![0.0]), AlgoConfig::new(Algorithm::FedAdam));
        server_step(&mut s, &ParamVector(vec![1.0])).unwrap();
        assert!((s.momentum.0[0] - 0.1).abs() < 1e-15);
        assert!((s.second_moment.0[0] - 0.001).abs() < 1e-15);
        let (m, v) = (1.0 - 0.9, 1.0 - 0.999);
        let expect = 1e-3 * m / (f64::sqrt(v) + 1e-6);
        assert_eq!(s.params.0[0], expect);
        assert!((expect - 3.1622e-3).abs() < 1e-7);
    }

    #[test]
    fn non_finite_delta_rejected() {
        let mut s = ServerState::new(ParamVector(vec![0.0]), AlgoConfig::new(Algorithm::FedAvg));
        assert!(matches!(server_step(&mut s, &ParamVector(vec![f64::NAN])), Err(FlError::NonFiniteDelta)));
        assert_eq!(s.round, 0);
    }

    #[test]
    fn scaffold_control_examples() {
        let cd = |v: f64| ClientUpdate { control_delta: Some(ParamVector(vec![v])), ..upd(0, vec![0.0], 1) };
        let mut s = ServerState::new(ParamVector(vec![0.0]), AlgoConfig::new(Algorithm::Scaffold));
        scaffold_server_control(&mut s, &[cd(0.0), cd(0.0)], 2).unwrap();
        assert_eq!(s.control.0, vec![0.0]);
        scaffold_server_control(&mut s, &[cd(3.0), cd(0.0), cd(0.0)], 3).unwrap();
        assert_eq!(s.control.0, vec![1.0]);
        scaffold_server_control(&mut s, &[cd(2.0), cd(2.0), cd(2.0)], 6).unwrap();
        assert_eq!(s.control.0, vec![2.0]);
        let missing = upd(4, vec![0.0], 1);
        assert!(matches!(
            scaffold_server_control(&mut s, &[missing], 6),
            Err(FlError::MissingControlDelta(4))
        ));
    }

    #[test]
    fn sampling_counts() {
        assert_eq!(sample_count(0.10, 40), 4);
        assert_eq!(sample_count(0.10, 70), 7);
        assert_eq!(sample_count(0.10, 41), 5);
        assert_eq!(sample_count(0.10, 1), 1);
        assert_eq!(sample_count(1.0, 13), 13);
    }

    #[test]
    fn payload_arithmetic() {
        assert_eq!(communication_bytes(1000, 4, Payload::Full, 0), 4000);
        assert_eq!(communication_bytes(1000, 4, Payload::Adapter, 0), 0);
        assert_eq!(communication_bytes(17 * 65, 8, Payload::Full, 0), 8840);
        let l = CommLedger::new(1105, 10, 8, 30, 3, Algorithm::Scaffold).unwrap();
        assert_eq!(l.full_bytes_per_client_round, 2 * 8840);
        assert_eq!(l.adapter_bytes_total, 2 * 80 * 90);
        assert!(CommLedger::new(10, 1, 3, 1, 1, Algorithm::FedAvg).is_err());
    }
}
