//! The consensus training protocol.
//!
//! A round visits every node in id order. The visited node (the initiator)
//! runs a forward pass, picks a neighbour uniformly at random, and the
//! neighbour runs a forward pass on the same rows. Both then backpropagate
//! the loss of the averaged prediction `y_gossip = (yhat_t + yhat_u) / 2`
//! through their own traces and take an SGD step. Events apply
//! sequentially, so later events in a round see earlier updates.
//!
//! Only prediction vectors cross an edge: [`gossip`] takes two prediction
//! slices and the shared labels, never feature matrices.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::metrics::ConvergenceBaseline;
use crate::nn::{compute_loss, output_residual, LossKind, MlpModel};
use crate::rng::{self, SimRng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    Complete,
    Ring,
    RandomRegular(usize),
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Complete => write!(f, "complete"),
            TopologyKind::Ring => write!(f, "ring"),
            TopologyKind::RandomRegular(d) => write!(f, "random_regular:{d}"),
        }
    }
}

impl FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "complete" => Ok(TopologyKind::Complete),
            "ring" => Ok(TopologyKind::Ring),
            other => other
                .strip_prefix("random_regular:")
                .and_then(|d| d.trim().parse().ok())
                .map(TopologyKind::RandomRegular)
                .ok_or_else(|| format!("unknown topology '{other}' (expected complete, ring or random_regular:<d>)")),
        }
    }
}

impl Serialize for TopologyKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TopologyKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Undirected, connected communication graph without self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Validates and normalizes (sorts) the adjacency lists.
    pub fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Result<Self> {
        let m = adjacency.len();
        if m == 0 {
            return Err(Error::Config("topology needs at least one node".into()));
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        for (i, list) in adjacency.iter().enumerate() {
            for w in list.windows(2) {
                if w[0] == w[1] {
                    return Err(Error::Config(format!("duplicate edge {i}-{}", w[0])));
                }
            }
            for &j in list {
                if j >= m || j == i {
                    return Err(Error::Config(format!("invalid edge {i}-{j}")));
                }
                if adjacency[j].binary_search(&i).is_err() {
                    return Err(Error::Config(format!("edge {i}-{j} is not symmetric")));
                }
            }
        }
        let topo = Topology { adjacency };
        if !topo.is_connected() {
            return Err(Error::Config("topology is not connected".into()));
        }
        Ok(topo)
    }

    pub fn nodes(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn is_connected(&self) -> bool {
        let m = self.adjacency.len();
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

pub fn build_topology(kind: TopologyKind, m: usize, seed: u64) -> Result<Topology> {
    if m == 0 {
        return Err(Error::Config("node count must be at least 1".into()));
    }
    let adjacency = match kind {
        TopologyKind::Complete => (0..m).map(|i| (0..m).filter(|&j| j != i).collect()).collect(),
        TopologyKind::Ring => match m {
            1 => vec![vec![]],
            2 => vec![vec![1], vec![0]],
            _ => (0..m).map(|i| vec![(i + m - 1) % m, (i + 1) % m]).collect(),
        },
        TopologyKind::RandomRegular(d) => random_regular(m, d, seed)?,
    };
    Topology::from_adjacency(adjacency)
}

/// Pairing-model sampler with rejection of non-simple or disconnected draws.
fn random_regular(m: usize, d: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m == 1 && d == 0 {
        return Ok(vec![vec![]]);
    }
    if d == 0 || d >= m || !(d * m).is_multiple_of(2) {
        return Err(Error::Config(format!("no {d}-regular graph on {m} nodes (need 0 < d < m and d*m even)")));
    }
    if d == 1 && m > 2 {
        return Err(Error::Config(format!("a 1-regular graph on {m} nodes is never connected")));
    }
    let mut rng = rng::stream(seed, Stream::Topology, 0);
    const ATTEMPTS: usize = 10_000;
    for _ in 0..ATTEMPTS {
        let mut stubs: Vec<usize> = (0..m).flat_map(|v| std::iter::repeat_n(v, d)).collect();
        let mut adjacency = vec![Vec::with_capacity(d); m];
        let mut ok = true;
        while !stubs.is_empty() {
            let a = stubs.swap_remove(rng.gen_range(0..stubs.len()));
            let b = stubs.swap_remove(rng.gen_range(0..stubs.len()));
            if a == b || adjacency[a].contains(&b) {
                ok = false;
                break;
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        if ok {
            if let Ok(t) = Topology::from_adjacency(adjacency.clone()) {
                return Ok(t.adjacency);
            }
        }
    }
    Err(Error::Config(format!("failed to sample a connected {d}-regular graph on {m} nodes")))
}

/// Chain factor applied to the gossiped-loss derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradScale {
    /// Exact derivative of the averaged prediction: one half.
    #[default]
    Half,
    Full,
}

impl GradScale {
    pub fn factor(self) -> f64 {
        match self {
            GradScale::Half => 0.5,
            GradScale::Full => 1.0,
        }
    }
}

/// How per-example gradients are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl Reduction {
    pub fn factor(self, batch: usize) -> f64 {
        match self {
            Reduction::Mean if batch > 0 => 1.0 / batch as f64,
            _ => 1.0,
        }
    }
}

/// Knobs shared by the gossip trainer and the centralized baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub gossip_grad_scale: GradScale,
    pub reduction: Reduction,
    pub minibatch: Option<usize>,
    /// Maximum number of rounds.
    pub max_rounds: usize,
    /// Stop once the largest per-parameter change over a round drops below this.
    pub stop_tol: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            loss: LossKind::CrossEntropy,
            learning_rate: 0.1,
            gossip_grad_scale: GradScale::Half,
            reduction: Reduction::Mean,
            minibatch: None,
            max_rounds: 600,
            stop_tol: 1e-5,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("T must be at least 1".into()));
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 {
            return Err(Error::Config(format!("stop_tol {} must be non-negative", self.stop_tol)));
        }
        if self.minibatch == Some(0) {
            return Err(Error::Config("minibatch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Picks the rows used by one gradient step: all of them, or a sorted
/// sample without replacement when a minibatch size is configured.
pub fn draw_batch(n: usize, minibatch: Option<usize>, rng: &mut SimRng) -> Option<Vec<usize>> {
    match minibatch {
        Some(b) if b < n => {
            let mut rows = index::sample(rng, n, b).into_vec();
            rows.sort_unstable();
            Some(rows)
        }
        _ => None,
    }
}

/// Per-node simulation state.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node_id: usize,
    pub model: MlpModel,
    pub feature_assignment: Vec<usize>,
    /// Predictions on every local training row as of the last refresh.
    pub predictions: Vec<f64>,
    pub local_loss: f64,
    pub last_weight_snapshot: Vec<f64>,
}

impl NodeState {
    pub fn new(node_id: usize, model: MlpModel, feature_assignment: Vec<usize>) -> Self {
        let last_weight_snapshot = model.parameters();
        NodeState { node_id, model, feature_assignment, predictions: Vec::new(), local_loss: f64::NAN, last_weight_snapshot }
    }

    /// Recomputes predictions and local loss on the node's training rows.
    pub fn refresh(&mut self, x: &Matrix, y: &[f64], loss: LossKind) -> Result<()> {
        self.predictions = self.model.batch_predict(x)?;
        self.local_loss = compute_loss(loss, y, &self.predictions)?;
        Ok(())
    }
}

/// Result of averaging two prediction vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipOutcome {
    pub y_gossip: Vec<f64>,
    /// Loss of the averaged prediction.
    pub gossiped_loss: f64,
    /// `(L_t + L_u) / 2`, kept for diagnostics.
    pub mean_local_loss: f64,
}

/// Averages two peers' predictions and scores the average.
pub fn gossip(loss: LossKind, y: &[f64], own: &[f64], neighbour: &[f64]) -> Result<GossipOutcome> {
    if own.len() != neighbour.len() {
        return Err(Error::Input(format!(
            "peers exchanged prediction vectors of length {} and {}",
            own.len(),
            neighbour.len()
        )));
    }
    let y_gossip: Vec<f64> = own.iter().zip(neighbour).map(|(a, b)| 0.5 * (a + b)).collect();
    let gossiped_loss = compute_loss(loss, y, &y_gossip)?;
    let mean_local_loss = 0.5 * (compute_loss(loss, y, own)? + compute_loss(loss, y, neighbour)?);
    Ok(GossipOutcome { y_gossip, gossiped_loss, mean_local_loss })
}

/// One pairwise exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipEvent {
    pub round: usize,
    pub initiator: usize,
    pub responder: usize,
    pub y_gossip: Vec<f64>,
    pub gossiped_loss: f64,
}

/// Compact record of one event kept in the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub initiator: usize,
    /// `None` when the initiator has no neighbours and trained locally.
    pub responder: Option<usize>,
    pub gossiped_loss: f64,
    pub mean_local_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based.
    pub round: usize,
    pub events: Vec<EventSummary>,
    /// Local loss of every node after the round.
    pub node_losses: Vec<f64>,
    /// Largest absolute parameter change of any node over the round.
    pub max_weight_delta: f64,
    pub convergence_metric: Option<f64>,
}

impl RoundLog {
    pub fn mean_local_loss(&self) -> f64 {
        self.node_losses.iter().sum::<f64>() / self.node_losses.len().max(1) as f64
    }
}

/// Random streams consumed by the trainer.
#[derive(Debug, Clone)]
pub struct TrainingRngs {
    pub peer: SimRng,
    pub batch: SimRng,
}

impl TrainingRngs {
    pub fn from_seed(seed: u64) -> Self {
        TrainingRngs { peer: rng::stream(seed, Stream::PeerSelection, 0), batch: rng::stream(seed, Stream::Minibatch, 0) }
    }
}

fn check_inputs(nodes: &[NodeState], topo: &Topology, data: &[Matrix], y: &[f64]) -> Result<()> {
    if nodes.len() != topo.nodes() || data.len() != nodes.len() {
        return Err(Error::Input(format!(
            "{} nodes, {} topology vertices, {} local datasets",
            nodes.len(),
            topo.nodes(),
            data.len()
        )));
    }
    if let Some(bad) = data.iter().position(|x| x.rows() != y.len()) {
        return Err(Error::Input(format!("node {bad} has {} rows, labels have {}", data[bad].rows(), y.len())));
    }
    Ok(())
}

fn scaled(mut r: Vec<f64>, factor: f64) -> Vec<f64> {
    if factor != 1.0 {
        r.iter_mut().for_each(|v| *v *= factor);
    }
    r
}

/// Runs one synchronous round. `round` is 1-based and only used for logs and errors.
pub fn run_round(
    nodes: &mut [NodeState],
    topo: &Topology,
    data: &[Matrix],
    y: &[f64],
    cfg: &TrainingConfig,
    round: usize,
    rngs: &mut TrainingRngs,
) -> Result<RoundLog> {
    check_inputs(nodes, topo, data, y)?;
    let before: Vec<Vec<f64>> = nodes.iter().map(|n| n.model.parameters()).collect();
    let mut events = Vec::with_capacity(nodes.len());
    let diverged = |node: usize| Error::Divergence(format!("non-finite loss in round {round} at node {node}"));

    for initiator in 0..nodes.len() {
        let rows = draw_batch(y.len(), cfg.minibatch, &mut rngs.batch);
        let (x_i, y_b): (Cow<'_, Matrix>, Cow<'_, [f64]>) = match &rows {
            Some(r) => (
                Cow::Owned(data[initiator].select_rows(r)),
                Cow::Owned(r.iter().map(|&k| y[k]).collect()),
            ),
            None => (Cow::Borrowed(&data[initiator]), Cow::Borrowed(y)),
        };
        let reduce = cfg.reduction.factor(y_b.len());
        let trace_i = nodes[initiator].model.forward_batch(&x_i)?;
        let pred_i = trace_i.predictions();

        let neighbours = topo.neighbors(initiator);
        if neighbours.is_empty() {
            let local = compute_loss(cfg.loss, &y_b, &pred_i)?;
            if !local.is_finite() {
                return Err(diverged(initiator));
            }
            let residual = scaled(output_residual(cfg.loss, &y_b, &pred_i)?, reduce);
            let grads = nodes[initiator].model.backward(&trace_i, &residual)?;
            nodes[initiator].model.sgd_step(&grads, cfg.learning_rate).map_err(|_| diverged(initiator))?;
            events.push(EventSummary { initiator, responder: None, gossiped_loss: local, mean_local_loss: local });
            continue;
        }

        let responder = neighbours[rngs.peer.gen_range(0..neighbours.len())];
        let x_j = match &rows {
            Some(r) => Cow::Owned(data[responder].select_rows(r)),
            None => Cow::Borrowed(&data[responder]),
        };
        let trace_j = nodes[responder].model.forward_batch(&x_j)?;
        let pred_j = trace_j.predictions();

        let outcome = gossip(cfg.loss, &y_b, &pred_i, &pred_j)?;
        if !outcome.gossiped_loss.is_finite() {
            return Err(diverged(initiator));
        }
        let residual = scaled(
            output_residual(cfg.loss, &y_b, &outcome.y_gossip)?,
            cfg.gossip_grad_scale.factor() * reduce,
        );
        let grads_i = nodes[initiator].model.backward(&trace_i, &residual)?;
        let grads_j = nodes[responder].model.backward(&trace_j, &residual)?;
        nodes[initiator].model.sgd_step(&grads_i, cfg.learning_rate).map_err(|_| diverged(initiator))?;
        nodes[responder].model.sgd_step(&grads_j, cfg.learning_rate).map_err(|_| diverged(responder))?;
        events.push(EventSummary {
            initiator,
            responder: Some(responder),
            gossiped_loss: outcome.gossiped_loss,
            mean_local_loss: outcome.mean_local_loss,
        });
    }

    let mut max_weight_delta: f64 = 0.0;
    for (node, prev) in nodes.iter_mut().zip(&before) {
        let now = node.model.parameters();
        let delta = now.iter().zip(prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        max_weight_delta = max_weight_delta.max(delta);
        node.last_weight_snapshot = now;
    }
    let mut node_losses = Vec::with_capacity(nodes.len());
    for (node, x) in nodes.iter_mut().zip(data) {
        node.refresh(x, y, cfg.loss)?;
        if !node.local_loss.is_finite() {
            return Err(diverged(node.node_id));
        }
        node_losses.push(node.local_loss);
    }
    Ok(RoundLog { round, events, node_losses, max_weight_delta, convergence_metric: None })
}

/// Outcome of [`run_training`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub rounds: Vec<RoundLog>,
    /// True when the stopping tolerance was met before `max_rounds`.
    pub converged: bool,
}

impl TrainingRun {
    pub fn rounds_used(&self) -> usize {
        self.rounds.len()
    }
}

/// Runs rounds until the largest per-round weight change falls below
/// `stop_tol` or `max_rounds` elapse.
pub fn run_training(
    nodes: &mut [NodeState],
    topo: &Topology,
    data: &[Matrix],
    y: &[f64],
    cfg: &TrainingConfig,
    seed: u64,
    baseline: Option<&ConvergenceBaseline>,
) -> Result<TrainingRun> {
    cfg.validate()?;
    check_inputs(nodes, topo, data, y)?;
    let mut rngs = TrainingRngs::from_seed(seed);
    let mut rounds = Vec::new();
    let mut converged = false;
    for round in 1..=cfg.max_rounds {
        let mut log = run_round(nodes, topo, data, y, cfg, round, &mut rngs)?;
        if let Some(b) = baseline {
            let models: Vec<&MlpModel> = nodes.iter().map(|n| &n.model).collect();
            log.convergence_metric = Some(b.metric_at(round, &models)?);
        }
        let done = log.max_weight_delta < cfg.stop_tol;
        rounds.push(log);
        if done {
            converged = true;
            break;
        }
    }
    Ok(TrainingRun { rounds, converged })
}

/// Element-wise mean of every node's predicted probabilities.
pub fn distributed_predict(models: &[&MlpModel], test: &[Matrix]) -> Result<Vec<f64>> {
    if models.is_empty() || models.len() != test.len() {
        return Err(Error::Input(format!("{} models for {} test matrices", models.len(), test.len())));
    }
    let rows = test[0].rows();
    if let Some(bad) = test.iter().position(|t| t.rows() != rows) {
        return Err(Error::Input(format!("node {bad} has {} test rows, node 0 has {rows}", test[bad].rows())));
    }
    let mut sum = vec![0.0; rows];
    for (model, x) in models.iter().zip(test) {
        for (s, p) in sum.iter_mut().zip(model.batch_predict(x)?) {
            *s += p;
        }
    }
    let m = models.len() as f64;
    Ok(sum.into_iter().map(|s| s / m).collect())
}

/// `round,mean_local_loss,max_weight_delta,convergence_metric` per line.
pub fn rounds_to_csv(rounds: &[RoundLog]) -> String {
    let mut out = String::from("round,mean_local_loss,max_weight_delta,convergence_metric\n");
    for r in rounds {
        let metric = r.convergence_metric.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.round, r.mean_local_loss(), r.max_weight_delta, metric));
    }
    out
}
