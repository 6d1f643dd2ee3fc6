//! The decentralized training protocol.
//!
//! Clients sit on a strongly connected digraph with doubly stochastic mixing
//! weights and run synchronous gradient-tracking rounds:
//!
//! ```text
//! theta_i <- sum_j w_ij theta_j - lambda * gamma_i
//! gamma_i <- sum_j w_ij gamma_j + grad_i(theta_i_new) - grad_i(theta_i_old)
//! ```
//!
//! Three aggregation rules differ only in how gamma is seeded:
//!
//! * `Dsgt`: gamma_i = grad_i, the unprotected baseline.
//! * `Dp`: gamma_i = grad_i + Laplace noise, which protects the first
//!   message but biases the tracked gradient sum permanently.
//! * `Lppa`: before training, every directed edge carries a one-time Laplace
//!   noise vector; each client adds (sent - received) to gamma_i. The global
//!   sum of these differences telescopes to exactly zero, so the tracked
//!   gradient sum is unbiased while each individual first message is still
//!   noised.
//!
//! Randomness is split into per-purpose streams keyed by client or edge, so
//! switching rules never perturbs initialization, batch order, or any other
//! shared draw under the same seed.

use crate::data::Dataset;
use crate::model::{
    accuracy, forward_loss, grad_weights, init_params, Batch, ModelError, ModelParams, ModelSpec,
};
use crate::numerics::{
    laplace_vector, DenseMatrix, DenseVector, LaplaceSpec, NumericsError, SeededRng, StreamKey,
};
use crate::topology::{Digraph, WeightMatrix};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid protocol config: {0}")]
    BadConfig(String),
    #[error("expected {expected} client shards, got {got}")]
    ShardCount { expected: usize, got: usize },
    #[error("client {0} has an empty shard")]
    EmptyShard(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How the gradient tracker is seeded at round zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AggregationRule {
    Dsgt,
    Dp { beta: f64 },
    Lppa { beta: f64 },
}

impl AggregationRule {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationRule::Dsgt => "dsgt",
            AggregationRule::Dp { .. } => "dp",
            AggregationRule::Lppa { .. } => "lppa",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match *self {
            AggregationRule::Dsgt => None,
            AggregationRule::Dp { beta } | AggregationRule::Lppa { beta } => Some(beta),
        }
    }
}

/// One-time noise vectors exchanged over directed edges before training.
/// Keyed by (receiver, sender); holds exactly one entry per non-self edge.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLedger {
    entries: BTreeMap<(usize, usize), DenseVector>,
    dim: usize,
}

impl NoiseLedger {
    pub fn get(&self, receiver: usize, sender: usize) -> Option<&DenseVector> {
        self.entries.get(&(receiver, sender))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &DenseVector)> {
        self.entries.iter()
    }
}

/// Draws the pre-training noise for every directed non-self edge. Each edge
/// has its own stream keyed by (receiver, sender), so the ledger does not
/// depend on the order edges are visited in.
pub fn exchange_noise(
    graph: &Digraph,
    dim: usize,
    spec: &LaplaceSpec,
    seed: u64,
) -> Result<NoiseLedger, ProtocolError> {
    if dim == 0 {
        return Err(NumericsError::EmptyDimension.into());
    }
    let mut entries = BTreeMap::new();
    for (sender, receiver) in graph.directed_edges() {
        let mut rng = SeededRng::from_key(seed, StreamKey::EdgeNoise { receiver, sender });
        let noise = laplace_vector(&mut rng, dim, spec)?;
        entries.insert((receiver, sender), noise);
    }
    Ok(NoiseLedger { entries, dim })
}

/// Client i's injection: everything it sent minus everything it received.
/// Summed over all clients these cancel pairwise, edge by edge.
pub fn noise_difference(ledger: &NoiseLedger, graph: &Digraph, i: usize) -> DenseVector {
    let mut diff = DenseVector::zeros(ledger.dim());
    for &l in graph.out_neighbors(i) {
        if l != i {
            if let Some(sent) = ledger.get(l, i) {
                diff.axpy(1.0, sent);
            }
        }
    }
    for &j in graph.in_neighbors(i) {
        if j != i {
            if let Some(received) = ledger.get(i, j) {
                diff.axpy(-1.0, received);
            }
        }
    }
    diff
}

/// Per-client mutable state of one simulation.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub theta: ModelParams,
    pub gamma: DenseVector,
    /// grad_i(theta_i) on the batch of the round that produced theta.
    pub cached_grad: DenseVector,
    /// The batch that round used; this is what an eavesdropper on gamma
    /// would be trying to reconstruct.
    pub round_batch: Batch,
    pub shard: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub model: ModelSpec,
    pub rule: AggregationRule,
    pub lambda: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Observables recorded after every round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Mean loss of each client's model on its full local shard.
    pub per_client_loss: Vec<f64>,
    /// Each client's accuracy on the shared test set; NaN without one.
    pub per_client_accuracy: Vec<f64>,
    /// Accuracy of the client-averaged model on the test set; NaN without one.
    pub global_accuracy: f64,
    /// Max pairwise L2 distance between client models.
    pub consensus_distance: f64,
    /// ||sum_i gamma_i - sum_i cached_grad_i||_2; near zero for dsgt and
    /// lppa, and equal to the injected bias for dp.
    pub tracking_residual: f64,
    /// ||sum_i noise_difference(i)||_inf, recorded once per lppa run.
    pub noise_diff_sum_norm: Option<f64>,
    pub diverged: bool,
}

/// mixed[i] = sum_j w_ij items[j]
fn mix(weights: &WeightMatrix, items: &[DenseVector]) -> Vec<DenseVector> {
    let n = weights.n();
    let p = items[0].len();
    (0..n)
        .map(|i| {
            let mut acc = DenseVector::zeros(p);
            for (j, item) in items.iter().enumerate() {
                let wij = weights.get(i, j);
                if wij != 0.0 {
                    acc.axpy(wij, item);
                }
            }
            acc
        })
        .collect()
}

fn sample_batch(rng: &mut SeededRng, shard: &Dataset, batch_size: usize) -> Batch {
    let n = shard.n_samples();
    let k = batch_size.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: exactly k draws regardless of shard size.
    for i in 0..k {
        let j = i + rng.next_index(n - i);
        idx.swap(i, j);
    }
    Batch::from_dataset(&shard.select(&idx[..k]))
}

/// A full synchronous training run under one rule.
#[derive(Debug, Clone)]
pub struct SimulationState {
    config: SimulationConfig,
    graph: Digraph,
    weights: WeightMatrix,
    clients: Vec<ClientState>,
    ledger: Option<NoiseLedger>,
    test_set: Option<Dataset>,
    batch_rngs: Vec<SeededRng>,
    noise_diff_sum_norm: Option<f64>,
    round: usize,
    diverged: bool,
}

impl SimulationState {
    /// Validates shapes, initializes every client's model from its own
    /// stream, draws the round-zero batches, and seeds the trackers
    /// according to the rule.
    pub fn new(
        config: SimulationConfig,
        graph: Digraph,
        weights: WeightMatrix,
        shards: Vec<Dataset>,
        test_set: Option<Dataset>,
    ) -> Result<Self, ProtocolError> {
        let n = graph.n();
        if weights.n() != n {
            return Err(ProtocolError::BadConfig(format!(
                "weight matrix is {}x{} but graph has {n} nodes",
                weights.n(),
                weights.n()
            )));
        }
        if shards.len() != n {
            return Err(ProtocolError::ShardCount {
                expected: n,
                got: shards.len(),
            });
        }
        if !(config.lambda > 0.0) || !config.lambda.is_finite() {
            return Err(ProtocolError::BadConfig(format!(
                "step size must be positive and finite, got {}",
                config.lambda
            )));
        }
        if config.local_epochs == 0 {
            return Err(ProtocolError::BadConfig("local_epochs must be >= 1".into()));
        }
        if config.batch_size == 0 {
            return Err(ProtocolError::BadConfig("batch_size must be >= 1".into()));
        }
        for (i, shard) in shards.iter().enumerate() {
            if shard.n_samples() == 0 {
                return Err(ProtocolError::EmptyShard(i));
            }
            if shard.dim() != config.model.dim {
                return Err(ProtocolError::BadConfig(format!(
                    "client {i} shard dim {} does not match model dim {}",
                    shard.dim(),
                    config.model.dim
                )));
            }
            if shard.n_classes != config.model.n_classes {
                return Err(ProtocolError::BadConfig(format!(
                    "client {i} shard has {} classes, model expects {}",
                    shard.n_classes, config.model.n_classes
                )));
            }
        }
        let p = config.model.param_count();

        let ledger = match config.rule {
            AggregationRule::Lppa { beta } => {
                let spec = LaplaceSpec::new(beta)
                    .map_err(|_| ProtocolError::BadConfig(format!("noise scale beta={beta}")))?;
                Some(exchange_noise(&graph, p, &spec, config.seed)?)
            }
            AggregationRule::Dp { beta } => {
                LaplaceSpec::new(beta)
                    .map_err(|_| ProtocolError::BadConfig(format!("noise scale beta={beta}")))?;
                None
            }
            AggregationRule::Dsgt => None,
        };

        let mut batch_rngs: Vec<SeededRng> = (0..n)
            .map(|client| SeededRng::from_key(config.seed, StreamKey::Batch { client }))
            .collect();

        let mut clients = Vec::with_capacity(n);
        for (i, shard) in shards.into_iter().enumerate() {
            let mut init_rng = SeededRng::from_key(config.seed, StreamKey::ModelInit { client: i });
            let theta = init_params(&config.model, &mut init_rng);
            let batch = sample_batch(&mut batch_rngs[i], &shard, config.batch_size);
            let grad = grad_weights(&config.model, &theta, &batch)?;
            let mut gamma = grad.clone();
            match config.rule {
                AggregationRule::Dsgt => {}
                AggregationRule::Dp { beta } => {
                    let spec = LaplaceSpec::new(beta).expect("validated above");
                    let mut rng =
                        SeededRng::from_key(config.seed, StreamKey::DpNoise { client: i });
                    gamma.axpy(1.0, &laplace_vector(&mut rng, p, &spec)?);
                }
                AggregationRule::Lppa { .. } => {
                    let ledger = ledger.as_ref().expect("lppa builds a ledger");
                    gamma.axpy(1.0, &noise_difference(ledger, &graph, i));
                }
            }
            clients.push(ClientState {
                theta,
                gamma,
                cached_grad: grad,
                round_batch: batch,
                shard,
            });
        }

        let noise_diff_sum_norm = ledger.as_ref().map(|ledger| {
            let mut sum = DenseVector::zeros(p);
            for i in 0..n {
                sum.axpy(1.0, &noise_difference(ledger, &graph, i));
            }
            sum.norm_inf()
        });

        Ok(Self {
            config,
            graph,
            weights,
            clients,
            ledger,
            test_set,
            batch_rngs,
            noise_diff_sum_norm,
            round: 0,
            diverged: false,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn graph(&self) -> &Digraph {
        &self.graph
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn ledger(&self) -> Option<&NoiseLedger> {
        self.ledger.as_ref()
    }

    pub fn test_set(&self) -> Option<&Dataset> {
        self.test_set.as_ref()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// Plain average of the client models.
    pub fn average_theta(&self) -> ModelParams {
        let p = self.config.model.param_count();
        let mut avg = DenseVector::zeros(p);
        for c in &self.clients {
            avg.axpy(1.0 / self.clients.len() as f64, &c.theta);
        }
        avg
    }

    /// One synchronous round. After the first non-finite value the state
    /// freezes: further steps only advance the round counter and report
    /// diverged metrics.
    pub fn step(&mut self) -> Result<RoundMetrics, ProtocolError> {
        self.round += 1;
        if self.diverged {
            return Ok(self.metrics());
        }
        let model = self.config.model;
        let lambda = self.config.lambda;
        let n = self.clients.len();

        let thetas: Vec<DenseVector> = self.clients.iter().map(|c| c.theta.clone()).collect();
        let gammas: Vec<DenseVector> = self.clients.iter().map(|c| c.gamma.clone()).collect();
        let mixed_thetas = mix(&self.weights, &thetas);
        let mixed_gammas = mix(&self.weights, &gammas);

        let mut new_states = Vec::with_capacity(n);
        for i in 0..n {
            let batch = sample_batch(
                &mut self.batch_rngs[i],
                &self.clients[i].shard,
                self.config.batch_size,
            );
            let mut theta = mixed_thetas[i].clone();
            theta.axpy(-lambda, &gammas[i]);
            // Extra local passes reuse this round's batch.
            for _ in 1..self.config.local_epochs {
                if !theta.is_finite() {
                    break;
                }
                let g = grad_weights(&model, &theta, &batch)?;
                theta.axpy(-lambda, &g);
            }
            let grad = if theta.is_finite() {
                grad_weights(&model, &theta, &batch)?
            } else {
                DenseVector::from_fn(theta.len(), |_| f64::NAN)
            };
            let mut gamma = mixed_gammas[i].clone();
            gamma.axpy(1.0, &grad);
            gamma.axpy(-1.0, &self.clients[i].cached_grad);
            new_states.push((theta, gamma, grad, batch));
        }

        for (client, (theta, gamma, grad, batch)) in self.clients.iter_mut().zip(new_states) {
            if !theta.is_finite() || !gamma.is_finite() || !grad.is_finite() {
                self.diverged = true;
            }
            client.theta = theta;
            client.gamma = gamma;
            client.cached_grad = grad;
            client.round_batch = batch;
        }
        Ok(self.metrics())
    }

    /// Metrics for the current state; `round` 0 describes initialization.
    pub fn metrics(&self) -> RoundMetrics {
        let n = self.clients.len();
        if self.diverged {
            return RoundMetrics {
                round: self.round,
                per_client_loss: vec![f64::NAN; n],
                per_client_accuracy: vec![f64::NAN; n],
                global_accuracy: f64::NAN,
                consensus_distance: f64::NAN,
                tracking_residual: f64::NAN,
                noise_diff_sum_norm: self.noise_diff_sum_norm,
                diverged: true,
            };
        }
        let model = &self.config.model;
        let test_batch = self.test_set.as_ref().map(Batch::from_dataset);

        let per_client_loss: Vec<f64> = self
            .clients
            .iter()
            .map(|c| {
                forward_loss(model, &c.theta, &Batch::from_dataset(&c.shard)).unwrap_or(f64::NAN)
            })
            .collect();
        let per_client_accuracy: Vec<f64> = self
            .clients
            .iter()
            .map(|c| match &test_batch {
                Some(b) => accuracy(model, &c.theta, b).unwrap_or(f64::NAN),
                None => f64::NAN,
            })
            .collect();
        let global_accuracy = match &test_batch {
            Some(b) => accuracy(model, &self.average_theta(), b).unwrap_or(f64::NAN),
            None => f64::NAN,
        };

        let mut consensus = 0.0_f64;
        for i in 0..n {
            for j in i + 1..n {
                consensus =
                    consensus.max(self.clients[i].theta.sub(&self.clients[j].theta).norm2());
            }
        }

        let p = model.param_count();
        let mut gamma_sum = DenseVector::zeros(p);
        let mut grad_sum = DenseVector::zeros(p);
        for c in &self.clients {
            gamma_sum.axpy(1.0, &c.gamma);
            grad_sum.axpy(1.0, &c.cached_grad);
        }

        RoundMetrics {
            round: self.round,
            per_client_loss,
            per_client_accuracy,
            global_accuracy,
            consensus_distance: consensus,
            tracking_residual: gamma_sum.sub(&grad_sum).norm2(),
            noise_diff_sum_norm: self.noise_diff_sum_norm,
            diverged: false,
        }
    }

    /// Runs the configured number of rounds and returns metrics for round 0
    /// through the final round.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>, ProtocolError> {
        let mut all = Vec::with_capacity(self.config.rounds + 1);
        all.push(self.metrics());
        for _ in 0..self.config.rounds {
            all.push(self.step()?);
        }
        Ok(all)
    }
}

/// The same round algebra with every gradient pinned to a constant. The
/// tracker update then telescopes to gamma' = W gamma, which makes rule
/// perturbations exactly predictable and lets tests compare trajectories
/// against closed forms.
#[derive(Debug, Clone)]
pub struct FrozenSimulation {
    weights: WeightMatrix,
    thetas: Vec<DenseVector>,
    gammas: Vec<DenseVector>,
    fixed_grads: Vec<DenseVector>,
    lambda: f64,
    round: usize,
}

impl FrozenSimulation {
    /// Seeds gamma_i = fixed_grads[i] + offsets[i], mirroring how each rule
    /// seeds its tracker.
    pub fn new(
        weights: WeightMatrix,
        thetas: Vec<DenseVector>,
        fixed_grads: Vec<DenseVector>,
        offsets: Option<&[DenseVector]>,
        lambda: f64,
    ) -> Result<Self, ProtocolError> {
        let n = weights.n();
        if thetas.len() != n || fixed_grads.len() != n {
            return Err(ProtocolError::ShardCount {
                expected: n,
                got: thetas.len().min(fixed_grads.len()),
            });
        }
        let gammas = match offsets {
            Some(offsets) => {
                if offsets.len() != n {
                    return Err(ProtocolError::ShardCount {
                        expected: n,
                        got: offsets.len(),
                    });
                }
                fixed_grads
                    .iter()
                    .zip(offsets.iter())
                    .map(|(g, o)| g.add(o))
                    .collect()
            }
            None => fixed_grads.clone(),
        };
        Ok(Self {
            weights,
            thetas,
            gammas,
            fixed_grads,
            lambda,
            round: 0,
        })
    }

    /// Builds the rule's round-zero offsets from the same noise streams a
    /// real simulation would use, and returns them row-stacked for
    /// comparison against closed forms.
    pub fn with_rule(
        weights: WeightMatrix,
        graph: &Digraph,
        thetas: Vec<DenseVector>,
        fixed_grads: Vec<DenseVector>,
        lambda: f64,
        rule: AggregationRule,
        seed: u64,
    ) -> Result<(Self, DenseMatrix), ProtocolError> {
        let n = graph.n();
        let p = fixed_grads
            .first()
            .map(DenseVector::len)
            .ok_or(ProtocolError::ShardCount {
                expected: n,
                got: 0,
            })?;
        let offsets: Vec<DenseVector> = match rule {
            AggregationRule::Dsgt => (0..n).map(|_| DenseVector::zeros(p)).collect(),
            AggregationRule::Dp { beta } => {
                let spec = LaplaceSpec::new(beta)
                    .map_err(|_| ProtocolError::BadConfig(format!("noise scale beta={beta}")))?;
                (0..n)
                    .map(|client| {
                        let mut rng = SeededRng::from_key(seed, StreamKey::DpNoise { client });
                        laplace_vector(&mut rng, p, &spec)
                    })
                    .collect::<Result<_, _>>()?
            }
            AggregationRule::Lppa { beta } => {
                let spec = LaplaceSpec::new(beta)
                    .map_err(|_| ProtocolError::BadConfig(format!("noise scale beta={beta}")))?;
                let ledger = exchange_noise(graph, p, &spec, seed)?;
                (0..n)
                    .map(|i| noise_difference(&ledger, graph, i))
                    .collect()
            }
        };
        let offset_matrix = DenseMatrix::from_row_vectors(&offsets);
        let sim = Self::new(weights, thetas, fixed_grads, Some(&offsets), lambda)?;
        Ok((sim, offset_matrix))
    }

    pub fn step(&mut self) {
        let mixed_thetas = mix(&self.weights, &self.thetas);
        let mixed_gammas = mix(&self.weights, &self.gammas);
        for i in 0..self.thetas.len() {
            let mut theta = mixed_thetas[i].clone();
            theta.axpy(-self.lambda, &self.gammas[i]);
            self.thetas[i] = theta;
            // Same shape as the live update; the gradient terms cancel.
            let mut gamma = mixed_gammas[i].clone();
            gamma.axpy(1.0, &self.fixed_grads[i]);
            gamma.axpy(-1.0, &self.fixed_grads[i]);
            self.gammas[i] = gamma;
        }
        self.round += 1;
    }

    pub fn run(&mut self, rounds: usize) {
        for _ in 0..rounds {
            self.step();
        }
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn thetas(&self) -> &[DenseVector] {
        &self.thetas
    }

    pub fn gammas(&self) -> &[DenseVector] {
        &self.gammas
    }

    /// Client trackers stacked into an n x p matrix.
    pub fn gamma_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_row_vectors(&self.gammas)
    }
}
