//! Tick-driven engine for gossip and federated training.
//!
//! A gossip tick runs in fixed phases:
//!
//! 1. global broadcast, if scheduled for this tick;
//! 2. every node whose training is due trains on one freshly sampled batch
//!    (nodes are independent here and run in parallel);
//! 3. each trained node sends its weights, optionally sparsified, to all of
//!    its active peers;
//! 4. each receiver stores incoming models in sender order and, once its
//!    buffer holds `|active peers| * R` entries, averages and blends;
//! 5. metrics are recorded on evaluation ticks.
//!
//! All randomness comes from per-node substreams, so a run is bit-identical
//! regardless of the number of worker threads.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::averaging::{
    aggregate, compress_sample, plain_average, update_from_buffer, AveragingConfig, BufferEntry,
    ModelBuffer, Payload,
};
use crate::data::{dirichlet_partition, sample_batch, Dataset, LabelMode, NUM_CLASSES};
use crate::metrics::{
    layer_variance, model_weight_difference, AccuracyRow, MetricsLog, VarianceRow, WeightDiffRow,
};
use crate::nn::{
    backward, evaluate, sgd_step, validate_architecture, xavier_init, Hyperparams,
    InitDistribution, LayerSpec, ModelWeights, OptimizerState,
};
use crate::rng::{substream, SimRng, GLOBAL};
use crate::topology::{temporal_activation, Graph, TemporalState};
use crate::{Error, Result};

/// Substream tags. Exposed so independent reference loops can reproduce a
/// node's random draws.
pub mod streams {
    pub const INIT: &str = "init";
    pub const DATA: &str = "data";
    pub const SCHEDULE: &str = "schedule";
    pub const COMPRESS: &str = "compress";
    pub const HOLDOUT: &str = "holdout";
    pub const LABELS: &str = "labels";
}

/// Samples in the per-node holdout that gates temporal peer activation.
pub const HOLDOUT_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Gossip,
    Federated,
}

/// Ticks between training sessions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    Fixed(u64),
    /// Drawn once per node, uniformly from `lo..=hi`.
    Uniform { lo: u64, hi: u64 },
}

impl Default for Acquisition {
    fn default() -> Self {
        Acquisition::Fixed(10)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataMode {
    #[default]
    Iid,
    Dirichlet { alpha: f64 },
}

/// Whether a random stream is private to each node or shared by all nodes.
/// Shared streams exist for symmetry experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamScope {
    #[default]
    PerNode,
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mode: Mode,
    pub architecture: Vec<LayerSpec>,
    pub init: InitDistribution,
    pub hyperparams: Hyperparams,
    pub averaging: AveragingConfig,
    /// R: averaging interval over training interval.
    pub interval_ratio: usize,
    pub acquisition: Acquisition,
    pub max_ticks: u64,
    pub eval_interval: u64,
    pub seed: u64,
    pub global_broadcast_tick: Option<u64>,
    pub data: DataMode,
    /// Gate peers behind the accuracy threshold, starting with none active.
    pub temporal: bool,
    pub init_scope: StreamScope,
    pub data_scope: StreamScope,
    /// Log per-node layer variances on evaluation ticks.
    pub record_variance: bool,
    pub record_events: bool,
    /// Worker threads for the parallel phases; `None` uses rayon's default.
    /// Does not affect results.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl SimConfig {
    pub fn new(architecture: Vec<LayerSpec>) -> Self {
        Self {
            mode: Mode::Gossip,
            architecture,
            init: InitDistribution::Uniform,
            hyperparams: Hyperparams::default(),
            averaging: AveragingConfig::default(),
            interval_ratio: 1,
            acquisition: Acquisition::default(),
            max_ticks: 1000,
            eval_interval: 10,
            seed: 0,
            global_broadcast_tick: None,
            data: DataMode::Iid,
            temporal: false,
            init_scope: StreamScope::PerNode,
            data_scope: StreamScope::PerNode,
            record_variance: true,
            record_events: false,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_architecture(&self.architecture)?;
        self.hyperparams.validate()?;
        self.averaging.validate()?;
        if self.interval_ratio == 0 {
            return Err(Error::Config("interval ratio R must be positive".into()));
        }
        if self.max_ticks == 0 {
            return Err(Error::Config("max_ticks must be at least 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval_interval must be at least 1".into()));
        }
        match self.acquisition {
            Acquisition::Fixed(0) => {
                return Err(Error::Config("T_acquisition must be positive".into()))
            }
            Acquisition::Uniform { lo, hi } if lo == 0 || lo > hi => {
                return Err(Error::Config(format!(
                    "T_acquisition range [{lo}, {hi}] must satisfy 1 <= lo <= hi"
                )))
            }
            Acquisition::Uniform { .. } if self.mode == Mode::Federated => {
                return Err(Error::Config(
                    "federated rounds are synchronous; use a fixed T_acquisition".into(),
                ))
            }
            _ => {}
        }
        if let DataMode::Dirichlet { alpha } = self.data {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
            }
        }
        if self.temporal && self.mode == Mode::Federated {
            return Err(Error::Config(
                "temporal activation applies to gossip runs only".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON form of the config and the graph.
    pub fn digest(&self, graph: &Graph) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(self).expect("config serializes"));
        hasher.update(graph.to_edge_list().as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Train { samples: usize },
    Send { peers: usize, entries: usize },
    Average { buffered: usize, skipped_layers: Vec<String> },
    Broadcast,
    Activate { peer: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub node: usize,
    pub kind: EventKind,
}

/// Append-only, tick-ordered record of what happened during a run.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    fn push(&mut self, tick: u64, node: usize, kind: EventKind) {
        debug_assert!(self.events.last().is_none_or(|e| e.tick <= tick));
        self.events.push(Event { tick, node, kind });
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

/// One participant.
#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: usize,
    pub model: ModelWeights,
    pub optimizer: OptimizerState,
    pub buffer: ModelBuffer,
    pub labels: LabelMode,
    /// Ticks between training sessions.
    pub period: u64,
    pub next_training: u64,
    pub temporal: Option<TemporalState>,
    pub samples_seen: u64,
    baseline_peers: Vec<usize>,
    holdout: Option<Dataset>,
    data_rng: SimRng,
    compress_rng: SimRng,
}

impl NodeState {
    /// Peers this node currently exchanges models with.
    pub fn active_peers(&self) -> Vec<usize> {
        match &self.temporal {
            Some(t) => t.active().iter().copied().collect(),
            None => self.baseline_peers.clone(),
        }
    }

    fn refresh_capacity(&mut self, ratio: usize) {
        let cap = self.active_peers().len() * ratio;
        self.buffer.set_capacity(cap);
    }

    /// One training session: sample a batch, backpropagate, take an SGD step.
    fn train(&mut self, dataset: &Dataset, hp: &Hyperparams) -> Result<()> {
        let batch = sample_batch(dataset, &self.labels, hp.batch_size, &mut self.data_rng)?;
        let grads = backward(&self.model, batch.images.view(), &batch.labels)?;
        sgd_step(&mut self.model, &grads, &mut self.optimizer, hp)?;
        self.samples_seen += hp.batch_size as u64;
        self.next_training += self.period;
        Ok(())
    }

    /// Temporal gate after a session. Returns a newly activated peer.
    fn gate(&mut self) -> Result<Option<usize>> {
        let (Some(state), Some(holdout)) = (self.temporal.as_mut(), self.holdout.as_ref()) else {
            return Ok(None);
        };
        let acc = evaluate(&self.model, holdout)?;
        Ok(temporal_activation(state, acc))
    }
}

/// Stores `incoming` in the node's buffer; once full, averages per `cfg`,
/// blends the result into the node model and clears the buffer. Returns the
/// layers skipped by variance correction when averaging fired.
pub fn on_receive_model(
    node: &mut NodeState,
    incoming: BufferEntry,
    cfg: &AveragingConfig,
) -> Result<Option<Vec<String>>> {
    match &incoming.payload {
        Payload::Dense(m) => node.model.ensure_compatible(m)?,
        Payload::Sparse(s) => {
            if s.architecture != node.model.architecture() {
                return Err(Error::Architecture(
                    "sparse payload does not match the receiver's architecture".into(),
                ));
            }
        }
    }
    node.buffer.push(incoming)?;
    average_if_full(node, cfg)
}

fn average_if_full(node: &mut NodeState, cfg: &AveragingConfig) -> Result<Option<Vec<String>>> {
    if !node.buffer.is_full() {
        return Ok(None);
    }
    let (next, skipped) = update_from_buffer(&node.model, &node.buffer, cfg)?;
    node.model = next;
    node.buffer.clear();
    Ok(Some(skipped))
}

/// Replaces every model with the plain average of all of them.
pub fn global_broadcast(nodes: &mut [NodeState]) -> Result<()> {
    // summation rounding would perturb a set of identical models
    if nodes.windows(2).all(|w| w[0].model == w[1].model) {
        return Ok(());
    }
    let models: Vec<&ModelWeights> = nodes.iter().map(|n| &n.model).collect();
    let avg = plain_average(&models)?;
    for n in nodes {
        n.model = avg.clone();
    }
    Ok(())
}

/// A configured run in progress. `run` drives it to completion; the phase
/// methods are public for step-by-step inspection.
pub struct Simulation<'a> {
    config: SimConfig,
    graph: Graph,
    train: &'a Dataset,
    test: &'a Dataset,
    nodes: Vec<NodeState>,
    metrics: MetricsLog,
    events: EventLog,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> Simulation<'a> {
    pub fn new(config: SimConfig, graph: Graph, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        config.validate()?;
        if graph.is_empty() {
            return Err(Error::Config("graph has no nodes".into()));
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty("training or test dataset".into()));
        }
        let width = config.architecture[0].n_in;
        if train.width() != width || test.width() != width {
            return Err(Error::Shape(format!(
                "datasets have {} / {} features, model expects {width}",
                train.width(),
                test.width()
            )));
        }
        if config.mode == Mode::Federated {
            let n = graph.len();
            let is_star = graph.degree(0) == n - 1 && (1..n).all(|v| graph.degree(v) == 1);
            if n < 2 || !is_star {
                return Err(Error::Config(
                    "federated runs need a star graph with the server at node 0".into(),
                ));
            }
        }

        let n = graph.len();
        let distributions = match config.data {
            DataMode::Iid => None,
            DataMode::Dirichlet { alpha } => Some(dirichlet_partition(
                alpha,
                n,
                NUM_CLASSES,
                substream_seed(config.seed, streams::LABELS),
            )?),
        };

        let scoped = |scope: StreamScope, id: usize| match scope {
            StreamScope::PerNode => id as u64,
            StreamScope::Shared => GLOBAL,
        };
        let mut nodes = Vec::with_capacity(n);
        for id in 0..n {
            let init_key = scoped(config.init_scope, id);
            let data_key = scoped(config.data_scope, id);
            let model = xavier_init(
                &config.architecture,
                config.init,
                &mut substream(config.seed, init_key, streams::INIT),
            )?;
            let labels = match &distributions {
                None => LabelMode::Iid,
                Some(d) => LabelMode::Skewed(d[id].clone()),
            };
            let period = match config.acquisition {
                Acquisition::Fixed(t) => t,
                Acquisition::Uniform { lo, hi } => {
                    use rand::Rng;
                    substream(config.seed, id as u64, streams::SCHEDULE).random_range(lo..=hi)
                }
            };
            let baseline_peers: Vec<usize> = graph.neighbors(id).iter().copied().collect();
            let (temporal, holdout) = if config.temporal {
                let mut rng = substream(config.seed, id as u64, streams::HOLDOUT);
                let batch = sample_batch(train, &labels, HOLDOUT_SIZE, &mut rng)?;
                (
                    Some(TemporalState::new(baseline_peers.iter().copied())),
                    Some(Dataset::from_batch(batch)?),
                )
            } else {
                (None, None)
            };
            let mut node = NodeState {
                id,
                optimizer: OptimizerState::new(&model),
                model,
                buffer: ModelBuffer::new(0),
                labels,
                period,
                next_training: 0,
                temporal,
                samples_seen: 0,
                baseline_peers,
                holdout,
                data_rng: substream(config.seed, data_key, streams::DATA),
                compress_rng: substream(config.seed, id as u64, streams::COMPRESS),
            };
            node.refresh_capacity(config.interval_ratio);
            nodes.push(node);
        }

        let pool = match config.threads {
            Some(t) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            ),
            None => None,
        };
        let metrics = MetricsLog {
            config_digest: config.digest(&graph),
            ..MetricsLog::default()
        };
        Ok(Self {
            config,
            graph,
            train,
            test,
            nodes,
            metrics,
            events: EventLog::default(),
            pool,
        })
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [NodeState] {
        &mut self.nodes
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    fn log(&mut self, tick: u64, node: usize, kind: EventKind) {
        if self.config.record_events {
            self.events.push(tick, node, kind);
        }
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    pub fn run(mut self) -> Result<MetricsLog> {
        for tick in 0..self.config.max_ticks {
            self.step(tick)?;
        }
        Ok(self.metrics)
    }

    /// Like [`Simulation::run`], also returning the event log and final nodes.
    pub fn run_detailed(mut self) -> Result<(MetricsLog, EventLog, Vec<NodeState>)> {
        for tick in 0..self.config.max_ticks {
            self.step(tick)?;
        }
        Ok((self.metrics, self.events, self.nodes))
    }

    pub fn step(&mut self, tick: u64) -> Result<()> {
        match self.config.mode {
            Mode::Gossip => {
                self.broadcast_phase(tick)?;
                let trained = self.train_phase(tick)?;
                self.exchange_phase(tick, &trained)?;
            }
            Mode::Federated => self.federated_round(tick)?,
        }
        if tick % self.config.eval_interval == 0 {
            self.record_metrics(tick)?;
        }
        Ok(())
    }

    pub fn broadcast_phase(&mut self, tick: u64) -> Result<()> {
        if self.config.global_broadcast_tick == Some(tick) {
            global_broadcast(&mut self.nodes)?;
            self.log(tick, 0, EventKind::Broadcast);
        }
        Ok(())
    }

    /// Trains every node due at `tick`; returns their ids in ascending order.
    pub fn train_phase(&mut self, tick: u64) -> Result<Vec<usize>> {
        let train = self.train;
        let hp = self.config.hyperparams.clone();
        let mut nodes = std::mem::take(&mut self.nodes);
        let outcome: Result<Vec<(usize, Option<usize>)>> = self.install(|| {
            nodes
                .par_iter_mut()
                .filter(|n| n.next_training == tick)
                .map(|n| {
                    n.train(train, &hp)?;
                    Ok((n.id, n.gate()?))
                })
                .collect()
        });
        self.nodes = nodes;
        let outcome = outcome?;

        let batch = self.config.hyperparams.batch_size;
        for &(id, activated) in &outcome {
            self.log(tick, id, EventKind::Train { samples: batch });
            if let Some(peer) = activated {
                // links are mutual: the peer starts exchanging with us too
                if let Some(t) = self.nodes[peer].temporal.as_mut() {
                    t.force_activate(id);
                }
                self.nodes[id].refresh_capacity(self.config.interval_ratio);
                self.nodes[peer].refresh_capacity(self.config.interval_ratio);
                self.log(tick, id, EventKind::Activate { peer });
            }
        }
        Ok(outcome.into_iter().map(|(id, _)| id).collect())
    }

    /// Sends the models of `senders` to their active peers and processes every
    /// receiver's inbox.
    pub fn exchange_phase(&mut self, tick: u64, senders: &[usize]) -> Result<()> {
        let n = self.nodes.len();
        let mut inboxes: Vec<Vec<BufferEntry>> = vec![Vec::new(); n];
        let ratio = self.config.averaging.compression_ratio;
        for &s in senders {
            let peers = self.nodes[s].active_peers();
            if peers.is_empty() {
                continue;
            }
            let node = &mut self.nodes[s];
            let payload = if self.config.averaging.compresses() {
                Payload::Sparse(Arc::new(compress_sample(&node.model, ratio, &mut node.compress_rng)?))
            } else {
                Payload::Dense(Arc::new(node.model.clone()))
            };
            let entries = match &payload {
                Payload::Dense(m) => m.num_params(),
                Payload::Sparse(sp) => sp.num_entries(),
            };
            let samples = node.samples_seen;
            for &p in &peers {
                inboxes[p].push(BufferEntry {
                    payload: payload.clone(),
                    sender: Some(s),
                    samples: Some(samples),
                });
            }
            self.log(tick, s, EventKind::Send { peers: peers.len(), entries });
        }

        let cfg = self.config.averaging.clone();
        let mut nodes = std::mem::take(&mut self.nodes);
        let outcome: Result<Vec<(usize, usize, Vec<String>)>> = self.install(|| {
            nodes
                .par_iter_mut()
                .zip(inboxes)
                .map(|(node, inbox)| {
                    let mut fired = Vec::new();
                    // capacity may have shrunk below the buffered count
                    if let Some(skipped) = average_if_full(node, &cfg)? {
                        fired.push((node.id, node.buffer.capacity(), skipped));
                    }
                    for entry in inbox {
                        let cap = node.buffer.capacity();
                        if let Some(skipped) = on_receive_model(node, entry, &cfg)? {
                            fired.push((node.id, cap, skipped));
                        }
                    }
                    Ok(fired)
                })
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().flatten().collect())
        });
        self.nodes = nodes;
        for (id, buffered, skipped_layers) in outcome? {
            self.note_average(tick);
            self.log(
                tick,
                id,
                EventKind::Average {
                    buffered,
                    skipped_layers,
                },
            );
        }
        Ok(())
    }

    fn note_average(&mut self, tick: u64) {
        self.metrics.averaging_events += 1;
        if self.metrics.t_first_average.is_none() {
            self.metrics.t_first_average = Some(tick);
        }
    }

    /// One synchronous FedAvg round, on ticks that are multiples of the
    /// acquisition period. Node 0 is the server; the rest are clients.
    pub fn federated_round(&mut self, tick: u64) -> Result<()> {
        let Acquisition::Fixed(period) = self.config.acquisition else {
            unreachable!("validated: federated runs use a fixed period");
        };
        if tick % period != 0 {
            return Ok(());
        }
        let global = self.nodes[0].model.clone();
        let train = self.train;
        let hp = self.config.hyperparams.clone();
        let mut nodes = std::mem::take(&mut self.nodes);
        let outcome: Result<()> = self.install(|| {
            nodes[1..].par_iter_mut().try_for_each(|client| {
                client.model = global.clone();
                client.train(train, &hp)
            })
        });
        self.nodes = nodes;
        outcome?;

        let mut buffer = ModelBuffer::new(self.nodes.len() - 1);
        for client in &self.nodes[1..] {
            buffer.push(BufferEntry {
                payload: Payload::Dense(Arc::new(client.model.clone())),
                sender: Some(client.id),
                samples: Some(hp.batch_size as u64),
            })?;
        }
        let agg = aggregate(&buffer, &global, &self.config.averaging)?;
        self.nodes[0].model = agg.model;
        self.note_average(tick);
        for id in 1..self.nodes.len() {
            self.log(tick, id, EventKind::Train { samples: hp.batch_size });
        }
        self.log(
            tick,
            0,
            EventKind::Average {
                buffered: buffer.len(),
                skipped_layers: agg.skipped,
            },
        );
        Ok(())
    }

    /// Nodes whose accuracy feeds A(t): everyone in gossip mode, the clients
    /// in federated mode.
    fn evaluated_nodes(&self) -> std::ops::Range<usize> {
        match self.config.mode {
            Mode::Gossip => 0..self.nodes.len(),
            Mode::Federated => 1..self.nodes.len(),
        }
    }

    pub fn record_metrics(&mut self, tick: u64) -> Result<()> {
        let range = self.evaluated_nodes();
        let test = self.test;
        let nodes = &self.nodes;
        let mut ids: Vec<usize> = range.clone().collect();
        if self.config.mode == Mode::Federated {
            ids.push(0);
        }
        let accs: Vec<(usize, f64)> = self.install(|| {
            ids.par_iter()
                .map(|&id| evaluate(&nodes[id].model, test).map(|a| (id, a)))
                .collect::<Result<Vec<_>>>()
        })?;
        for (id, accuracy) in accs {
            if self.config.mode == Mode::Federated && id == 0 {
                self.metrics.server_accuracy.push((tick, accuracy));
            } else {
                self.metrics.accuracy.push(AccuracyRow {
                    tick,
                    node: id,
                    accuracy,
                });
            }
        }
        if self.config.record_variance {
            for id in range.clone() {
                let node = &self.nodes[id];
                for (layer, variance) in node.model.layers.iter().zip(layer_variance(&node.model)) {
                    self.metrics.variance.push(VarianceRow {
                        tick,
                        node: id,
                        layer: layer.spec.name.clone(),
                        variance,
                    });
                }
            }
        }
        if range.len() >= 2 {
            let models: Vec<&ModelWeights> = self.nodes[range].iter().map(|n| &n.model).collect();
            let diffs = model_weight_difference(&models)?;
            for (layer, diff) in self.config.architecture.iter().zip(diffs) {
                self.metrics.weight_diff.push(WeightDiffRow {
                    tick,
                    layer: layer.name.clone(),
                    diff,
                });
            }
        }
        Ok(())
    }
}

fn substream_seed(seed: u64, tag: &str) -> u64 {
    use rand::Rng;
    substream(seed, GLOBAL, tag).random()
}

/// Runs the gossip procedure over `graph`.
pub fn run_gossip(config: SimConfig, train: &Dataset, test: &Dataset, graph: &Graph) -> Result<MetricsLog> {
    if config.mode != Mode::Gossip {
        return Err(Error::Config("run_gossip needs mode = gossip".into()));
    }
    Simulation::new(config, graph.clone(), train, test)?.run()
}

/// Runs synchronous federated averaging over a star graph (server = node 0).
pub fn run_federated(
    config: SimConfig,
    train: &Dataset,
    test: &Dataset,
    star: &Graph,
) -> Result<MetricsLog> {
    if config.mode != Mode::Federated {
        return Err(Error::Config("run_federated needs mode = federated".into()));
    }
    Simulation::new(config, star.clone(), train, test)?.run()
}

/// Dispatches on `config.mode`.
pub fn run(config: SimConfig, train: &Dataset, test: &Dataset, graph: &Graph) -> Result<MetricsLog> {
    Simulation::new(config, graph.clone(), train, test)?.run()
}
