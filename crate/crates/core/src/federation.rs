//! Federated training loop: local AdaDelta epochs on every client, weighted
//! parameter averaging on the server, broadcast, repeat.
//!
//! Results are bit-identical for any number of worker threads. Each client
//! draws its batch order from a stream keyed by `(seed, client, round)`, and
//! the server always sums client contributions in ascending id order.

use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use thiserror::Error;

use crate::data::{normalize, ClientDataset};
use crate::deepcog::{deepcog_batch, DeepCogError, DeepCogLossConfig};
use crate::logic::{loss_and_grad, FuzzyConfig, LogicError};
use crate::nn::{backward, forward, init_params, AdaDeltaConfig, AdaDeltaState, Matrix, MlpConfig, ModelParams, NnError};
use crate::rng::{self, StreamKind};

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid federation settings: {0}")]
    Config(String),
    #[error("aggregation failed: client {client_id} {reason}")]
    Aggregation { client_id: u32, reason: String },
    #[error("client {client_id} failed in round {round}: {source}")]
    Client {
        client_id: u32,
        round: u32,
        #[source]
        source: Box<FedError>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    DeepCog(#[from] DeepCogError),
}

/// Which objective clients minimise locally.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `1 - phi` of the fuzzy equality axiom.
    #[default]
    Flmr,
    /// Asymmetric provisioning cost baseline.
    DeepCog,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Flmr => "flmr",
            LossKind::DeepCog => "deepcog",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "flmr" => Ok(LossKind::Flmr),
            "deepcog" => Ok(LossKind::DeepCog),
            other => Err(format!("unknown loss `{other}` (expected flmr or deepcog)")),
        }
    }
}

/// Federation hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlConfig {
    /// K, number of clients.
    pub clients: usize,
    /// T, number of rounds.
    pub rounds: usize,
    /// L, local epochs per round.
    pub local_epochs: usize,
    /// Mini-batch size.
    pub batch_size: usize,
    /// Fraction of clients that train in a round; 1.0 means all.
    pub participation: f64,
    pub optimizer: AdaDeltaConfig,
    pub fuzzy: FuzzyConfig,
    pub deepcog: DeepCogLossConfig,
    pub loss_kind: LossKind,
    pub mlp: MlpConfig,
    pub seed: u64,
    /// Worker threads for the per-client parallel loop.
    pub workers: usize,
}

impl Default for FlConfig {
    fn default() -> Self {
        Self {
            clients: 50,
            rounds: 50,
            local_epochs: 1,
            batch_size: 500,
            participation: 1.0,
            optimizer: AdaDeltaConfig::default(),
            fuzzy: FuzzyConfig::default(),
            deepcog: DeepCogLossConfig::default(),
            loss_kind: LossKind::Flmr,
            mlp: MlpConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

impl FlConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        let bad = |m: &str| Err(FedError::Config(m.to_string()));
        if self.clients == 0 {
            return bad("client count K must be at least 1");
        }
        if self.rounds == 0 {
            return bad("round count T must be at least 1");
        }
        if self.local_epochs == 0 {
            return bad("local epoch count L must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.workers == 0 {
            return bad("worker count must be at least 1");
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad("participation must lie in (0, 1]");
        }
        self.optimizer.validate()?;
        Ok(())
    }

    /// Clients that train in each round.
    pub fn participants_per_round(&self) -> usize {
        ((self.participation * self.clients as f64).round() as usize).clamp(1, self.clients)
    }
}

/// Loss and satisfaction of a model on one data split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Value of the training objective (`1 - phi` for FLMR).
    pub loss: f64,
    /// Satisfaction of the fuzzy equality axiom, reported for both objectives.
    pub phi: f64,
}

/// A split normalized and ready for the network.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub features: Matrix,
    pub targets: Vec<f64>,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Per-client training state. Owned by one worker at a time.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: u32,
    pub train: PreparedSplit,
    pub test: PreparedSplit,
    pub params: ModelParams,
    pub opt_state: AdaDeltaState,
}

impl ClientState {
    pub fn new(dataset: &ClientDataset, initial: &ModelParams, cfg: &FlConfig) -> Result<Self, FedError> {
        let (xf, yf) = normalize(&dataset.train, &dataset.feature_stats);
        let (xt, yt) = normalize(&dataset.test, &dataset.feature_stats);
        if yf.is_empty() || yt.is_empty() {
            return Err(FedError::Config(format!("client {} has an empty train or test split", dataset.client_id)));
        }
        Ok(Self {
            client_id: dataset.client_id,
            train: PreparedSplit { features: xf, targets: yf },
            test: PreparedSplit { features: xt, targets: yt },
            params: initial.clone(),
            opt_state: AdaDeltaState::new(initial, cfg.optimizer)?,
        })
    }

    /// D_k.
    pub fn sample_count(&self) -> usize {
        self.train.len()
    }
}

/// Objective value, axiom satisfaction, and `dLoss/dPrediction`.
fn objective(predictions: &[f64], targets: &[f64], cfg: &FlConfig) -> Result<(f64, f64, Vec<f64>), FedError> {
    let (report, flmr_grad) = loss_and_grad(predictions, targets, &cfg.fuzzy)?;
    match cfg.loss_kind {
        LossKind::Flmr => Ok((report.loss, report.phi, flmr_grad)),
        LossKind::DeepCog => {
            let (loss, grad) = deepcog_batch(predictions, targets, &cfg.deepcog)?;
            Ok((loss, report.phi, grad))
        }
    }
}

/// Evaluates `params` on a split.
pub fn evaluate(params: &ModelParams, split: &PreparedSplit, cfg: &FlConfig) -> Result<(Evaluation, Vec<f64>), FedError> {
    let (pred, _) = forward(params, &split.features)?;
    let (loss, phi, _) = objective(&pred, &split.targets, cfg)?;
    Ok((Evaluation { loss, phi }, pred))
}

/// Runs `cfg.local_epochs` shuffled mini-batch epochs in place.
fn train_epochs(
    params: &mut ModelParams,
    opt: &mut AdaDeltaState,
    split: &PreparedSplit,
    client_id: u32,
    round: u32,
    cfg: &FlConfig,
) -> Result<(), FedError> {
    let mut rng = rng::stream(cfg.seed, StreamKind::Shuffle, client_id, round);
    let mut order: Vec<usize> = (0..split.len()).collect();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let x = split.features.select_rows(batch);
            let y: Vec<f64> = batch.iter().map(|&i| split.targets[i]).collect();
            let (pred, trace) = forward(params, &x)?;
            let (_, _, grad) = objective(&pred, &y, cfg)?;
            let grads = backward(params, &trace, &grad)?;
            opt.step(params, &grads)?;
        }
    }
    Ok(())
}

/// Adopts `global`, trains locally, and returns the training-split
/// evaluation of the resulting W_k.
pub fn local_train(client: &mut ClientState, global: &ModelParams, round: u32, cfg: &FlConfig) -> Result<Evaluation, FedError> {
    if !client.params.same_shape_as(global.layers()) {
        return Err(FedError::Config(format!("client {}: global model has a different shape", client.client_id)));
    }
    client.params.clone_from(global);
    train_epochs(&mut client.params, &mut client.opt_state, &client.train, client.client_id, round, cfg)?;
    Ok(evaluate(&client.params, &client.train, cfg)?.0)
}

/// One client's contribution to an aggregation.
#[derive(Debug, Clone, Copy)]
pub struct ClientUpdate<'a> {
    pub client_id: u32,
    pub params: &'a ModelParams,
    pub samples: usize,
}

/// Sample-weighted average `sum_k (D_k / D) W_k`, summed in ascending client id.
pub fn fedavg(updates: &[ClientUpdate<'_>]) -> Result<ModelParams, FedError> {
    let mut sorted: Vec<&ClientUpdate<'_>> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    let (first, rest) = sorted
        .split_first()
        .ok_or_else(|| FedError::Config("no client updates to aggregate".into()))?;
    for u in &sorted {
        if u.samples == 0 {
            return Err(FedError::Aggregation { client_id: u.client_id, reason: "reported zero samples".into() });
        }
        if !u.params.same_shape_as(first.params.layers()) {
            return Err(FedError::Aggregation { client_id: u.client_id, reason: "sent parameters of a different shape".into() });
        }
    }
    let total: usize = sorted.iter().map(|u| u.samples).sum();
    let weight = |u: &ClientUpdate<'_>| u.samples as f64 / total as f64;

    let mut global = first.params.clone();
    let w0 = weight(first);
    for v in global.values_mut() {
        *v *= w0;
    }
    for u in rest {
        let w = weight(u);
        for (g, v) in global.values_mut().zip(u.params.values()) {
            *g += w * v;
        }
    }
    Ok(global)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRoundMetrics {
    pub client_id: u32,
    pub train: Evaluation,
    pub test: Evaluation,
    pub participated: bool,
}

#[derive(Debug, Clone)]
pub struct RoundResult {
    pub round: u32,
    /// W^(t+1), the model broadcast at the end of the round.
    pub global_params: ModelParams,
    pub per_client: Vec<ClientRoundMetrics>,
    pub wall_time: f64,
}

impl RoundResult {
    fn mean(&self, f: impl Fn(&ClientRoundMetrics) -> f64) -> f64 {
        self.per_client.iter().map(f).sum::<f64>() / self.per_client.len() as f64
    }

    pub fn mean_train_phi(&self) -> f64 {
        self.mean(|c| c.train.phi)
    }

    pub fn mean_test_phi(&self) -> f64 {
        self.mean(|c| c.test.phi)
    }

    pub fn mean_train_loss(&self) -> f64 {
        self.mean(|c| c.train.loss)
    }

    pub fn mean_test_loss(&self) -> f64 {
        self.mean(|c| c.test.loss)
    }
}

/// Builds the client set, seeding W^(0) from `cfg.seed`.
pub fn setup_clients(cfg: &FlConfig, datasets: &[ClientDataset]) -> Result<(ModelParams, Vec<ClientState>), FedError> {
    cfg.validate()?;
    if datasets.len() != cfg.clients {
        return Err(FedError::Config(format!("K = {} but {} datasets supplied", cfg.clients, datasets.len())));
    }
    let mut ids: Vec<u32> = datasets.iter().map(|d| d.client_id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(FedError::Config("client ids must be unique".into()));
    }
    let global = init_params(&cfg.mlp, cfg.seed);
    let mut clients = datasets
        .iter()
        .map(|d| ClientState::new(d, &global, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    clients.sort_by_key(|c| c.client_id);
    Ok((global, clients))
}

fn participants(cfg: &FlConfig, round: u32) -> Vec<bool> {
    let m = cfg.participants_per_round();
    if m == cfg.clients {
        return vec![true; cfg.clients];
    }
    let idx: Vec<usize> = (0..cfg.clients).collect();
    let mut rng = rng::stream(cfg.seed, StreamKind::Participation, 0, round);
    let mut mask = vec![false; cfg.clients];
    for &i in idx.choose_multiple(&mut rng, m) {
        mask[i] = true;
    }
    mask
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, FedError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| FedError::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs `cfg.rounds` rounds of federated training and evaluates the
/// broadcast model on every client's held-out split after each round.
pub fn run_federation(cfg: &FlConfig, datasets: &[ClientDataset]) -> Result<Vec<RoundResult>, FedError> {
    let (mut global, mut clients) = setup_clients(cfg, datasets)?;
    let pool = pool(cfg.workers)?;
    let mut results = Vec::with_capacity(cfg.rounds);

    for t in 0..cfg.rounds as u32 {
        let started = Instant::now();
        let mask = participants(cfg, t);
        let global_ref = &global;
        let train_metrics: Vec<Result<Option<Evaluation>, FedError>> = pool.install(|| {
            clients
                .par_iter_mut()
                .zip(mask.par_iter())
                .map(|(c, &active)| {
                    if !active {
                        return Ok(None);
                    }
                    local_train(c, global_ref, t, cfg).map(Some).map_err(|e| FedError::Client {
                        client_id: c.client_id,
                        round: t,
                        source: Box::new(e),
                    })
                })
                .collect()
        });
        let train_metrics = train_metrics.into_iter().collect::<Result<Vec<_>, _>>()?;

        let updates: Vec<ClientUpdate<'_>> = clients
            .iter()
            .zip(&mask)
            .filter(|(_, &active)| active)
            .map(|(c, _)| ClientUpdate { client_id: c.client_id, params: &c.params, samples: c.sample_count() })
            .collect();
        global = fedavg(&updates)?;

        let global_ref = &global;
        let per_client: Vec<Result<ClientRoundMetrics, FedError>> = pool.install(|| {
            clients
                .par_iter()
                .zip(train_metrics.par_iter())
                .map(|(c, local)| {
                    let wrap = |e: FedError| FedError::Client { client_id: c.client_id, round: t, source: Box::new(e) };
                    let train = match local {
                        Some(m) => *m,
                        None => evaluate(global_ref, &c.train, cfg).map_err(wrap)?.0,
                    };
                    let test = evaluate(global_ref, &c.test, cfg).map_err(wrap)?.0;
                    Ok(ClientRoundMetrics { client_id: c.client_id, train, test, participated: local.is_some() })
                })
                .collect()
        });
        let per_client = per_client.into_iter().collect::<Result<Vec<_>, _>>()?;

        results.push(RoundResult {
            round: t,
            global_params: global.clone(),
            per_client,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    Ok(results)
}

/// Single-site reference trainer: one model and one optimizer over one
/// dataset, `cfg.rounds` blocks of `cfg.local_epochs` epochs, drawing batch
/// order from the same streams a lone federated client would use. Returns
/// the parameters after each block.
pub fn train_centralized(cfg: &FlConfig, dataset: &ClientDataset) -> Result<Vec<ModelParams>, FedError> {
    cfg.validate()?;
    let mut params = init_params(&cfg.mlp, cfg.seed);
    let (x, y) = normalize(&dataset.train, &dataset.feature_stats);
    let split = PreparedSplit { features: x, targets: y };
    let mut opt = AdaDeltaState::new(&params, cfg.optimizer)?;
    let mut history = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds as u32 {
        train_epochs(&mut params, &mut opt, &split, dataset.client_id, t, cfg)?;
        history.push(params.clone());
    }
    Ok(history)
}
