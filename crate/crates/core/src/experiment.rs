//! Experiment orchestration: configuration, the centralized baseline,
//! distributed trials, suites over seeds and overlap sweeps.
//!
//! A config is a TOML document. Top-level keys are `name`, `trials` and
//! `seeds`; the `[dataset]`, `[training]` and `[network]` tables hold the
//! remaining fields. Overrides address keys by dotted path, e.g.
//! `training.learning_rate=0.5`.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, DataFormat, Dataset, LabelRule, LoadOptions, NodeData, OverlapSpec, Scaling};
use crate::gossip::{
    self, draw_batch, GradScale, NodeState, Reduction, RoundLog, TopologyKind, TrainingConfig,
};
use crate::matrix::Matrix;
use crate::metrics::{self, ConfidenceInterval, ConvergenceBaseline, RocPoint};
use crate::nn::{self, architecture, Activation, LossKind, MlpModel};
use crate::rng::{self, Stream};
use crate::synthetic::{self, MadelonShape};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Files,
    LinearTeacher,
    MadelonLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub source: DataSource,
    pub format: Option<DataFormat>,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub train_labels_path: Option<PathBuf>,
    pub test_labels_path: Option<PathBuf>,
    pub label_rule: Option<LabelRule>,
    pub label_column: Option<String>,
    pub n_features: Option<usize>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    pub label_noise: Option<f64>,
    /// Seed for synthetic sources. Fixed across trials, like a real dataset.
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub scaling: Scaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden_neurons_centralized: usize,
    pub learning_rate: f64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_activation")]
    pub hidden_activation: Activation,
    #[serde(rename = "T")]
    pub max_rounds: usize,
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default)]
    pub gossip_grad_scale: GradScale,
    #[serde(default)]
    pub loss_reduction: Reduction,
    pub minibatch: Option<usize>,
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_stop_tol() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub m: usize,
    #[serde(default = "default_topology")]
    pub topology: TopologyKind,
    #[serde(default)]
    pub overlap_ratio: f64,
}

fn default_topology() -> TopologyKind {
    TopologyKind::Complete
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub trials: Option<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub dataset: DatasetSpec,
    pub training: TrainingSection,
    pub network: NetworkSection,
}

fn default_name() -> String {
    "experiment".into()
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `dotted.key = value` inside a TOML table, creating tables as needed.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' is malformed")));
    }
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{p}' is not a table")))?;
    }
    cur.insert(last.to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.normalized()
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let ds = &mut cfg.dataset;
        for p in [&mut ds.train_path, &mut ds.test_path, &mut ds.train_labels_path, &mut ds.test_labels_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn normalized(mut self) -> Result<Self> {
        match (self.trials, self.seeds.is_empty()) {
            (Some(t), true) => self.seeds = (0..t as u64).collect(),
            (Some(t), false) if t != self.seeds.len() => {
                return Err(Error::Config(format!("trials = {t} but seeds lists {} values", self.seeds.len())))
            }
            (None, true) => self.seeds = vec![0],
            _ => {}
        }
        self.trials = Some(self.seeds.len());
        Ok(self)
    }

    /// Replaces the trial seeds.
    pub fn set_seeds(&mut self, seeds: Vec<u64>) {
        self.trials = Some(seeds.len());
        self.seeds = seeds;
    }

    pub fn training_config(&self) -> TrainingConfig {
        let t = &self.training;
        TrainingConfig {
            loss: t.loss,
            learning_rate: t.learning_rate,
            gossip_grad_scale: t.gossip_grad_scale,
            reduction: t.loss_reduction,
            minibatch: t.minibatch,
            max_rounds: t.max_rounds,
            stop_tol: t.stop_tol,
        }
    }

    /// Hidden units per distributed node: `floor(H_C / m)`, at least one.
    pub fn hidden_per_node(&self) -> usize {
        (self.training.hidden_neurons_centralized / self.network.m.max(1)).max(1)
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("{key}: {msg}")));
        if self.seeds.is_empty() {
            return bad("seeds", "at least one trial seed is required".into());
        }
        let t = &self.training;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return bad("training.learning_rate", format!("{} must be finite and non-negative", t.learning_rate));
        }
        if t.max_rounds == 0 {
            return bad("training.T", "must be at least 1".into());
        }
        if t.stop_tol.is_nan() || t.stop_tol < 0.0 {
            return bad("training.stop_tol", format!("{} must be non-negative", t.stop_tol));
        }
        if t.minibatch == Some(0) {
            return bad("training.minibatch", "must be at least 1".into());
        }
        let n = &self.network;
        if n.m == 0 {
            return bad("network.m", "must be at least 1".into());
        }
        if t.hidden_neurons_centralized < n.m {
            return bad(
                "training.hidden_neurons_centralized",
                format!("{} is fewer than network.m = {}", t.hidden_neurons_centralized, n.m),
            );
        }
        if let Err(e) = OverlapSpec::new(n.overlap_ratio) {
            return bad("network.overlap_ratio", strip_prefix(&e));
        }
        if let Err(e) = gossip::build_topology(n.topology, n.m, 0) {
            return bad("network.topology", strip_prefix(&e));
        }
        let d = &self.dataset;
        match d.source {
            DataSource::Files => {
                if d.format.is_none() {
                    return bad("dataset.format", "required for file datasets (csv or svmlight)".into());
                }
                if d.label_rule.is_none() {
                    return bad("dataset.label_rule", "required for file datasets".into());
                }
                for (key, p) in [
                    ("dataset.train_path", &d.train_path),
                    ("dataset.test_path", &d.test_path),
                    ("dataset.train_labels_path", &d.train_labels_path),
                    ("dataset.test_labels_path", &d.test_labels_path),
                ] {
                    match p {
                        Some(p) if !p.is_file() => return bad(key, format!("file {} does not exist", p.display())),
                        None if key.ends_with("train_path") || key.ends_with("test_path") => {
                            return bad(key, "required for file datasets".into())
                        }
                        _ => {}
                    }
                }
                if d.train_labels_path.is_some() != d.test_labels_path.is_some() {
                    return bad("dataset.test_labels_path", "label files must be given for both splits or neither".into());
                }
            }
            DataSource::LinearTeacher => {
                for (key, v) in [("dataset.n_train", d.n_train), ("dataset.n_features", d.n_features)] {
                    if v.unwrap_or(0) == 0 {
                        return bad(key, "required and positive for linear_teacher".into());
                    }
                }
                if let Some(noise) = d.label_noise {
                    if !(0.0..=0.5).contains(&noise) {
                        return bad("dataset.label_noise", format!("{noise} must lie in [0, 0.5]"));
                    }
                }
            }
            DataSource::MadelonLike => {}
        }
        if let Some(nf) = self.known_feature_count() {
            if nf < n.m {
                return bad("network.m", format!("{} nodes but only {nf} features", n.m));
            }
        }
        Ok(())
    }

    fn known_feature_count(&self) -> Option<usize> {
        match self.dataset.source {
            DataSource::Files => self.dataset.n_features,
            DataSource::LinearTeacher => self.dataset.n_features,
            DataSource::MadelonLike => Some(MadelonShape::default().n_features()),
        }
    }

    /// Loads (or generates) and scales the dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        let raw = match d.source {
            DataSource::Files => {
                let path = |key: &str, p: &Option<PathBuf>| {
                    p.clone().ok_or_else(|| Error::Config(format!("dataset.{key}: required for file datasets")))
                };
                let mut opts = LoadOptions::new(
                    d.format.ok_or_else(|| Error::Config("dataset.format: required".into()))?,
                    d.label_rule.ok_or_else(|| Error::Config("dataset.label_rule: required".into()))?,
                );
                opts.label_column = d.label_column.clone();
                opts.train_labels_path = d.train_labels_path.as_ref().map(|p| p.to_string_lossy().into_owned());
                opts.test_labels_path = d.test_labels_path.as_ref().map(|p| p.to_string_lossy().into_owned());
                opts.n_features = d.n_features;
                data::load_dataset(&path("train_path", &d.train_path)?, &path("test_path", &d.test_path)?, &opts)?
            }
            DataSource::LinearTeacher => synthetic::linear_teacher(
                d.n_train.unwrap_or(0),
                d.n_test.unwrap_or(0),
                d.n_features.unwrap_or(0),
                d.label_noise.unwrap_or(0.0),
                d.data_seed,
            )?,
            DataSource::MadelonLike => synthetic::madelon_like(&MadelonShape::default(), d.data_seed)?,
        };
        if raw.n_features() < self.network.m {
            return Err(Error::Config(format!(
                "network.m: {} nodes but the dataset has {} features",
                self.network.m,
                raw.n_features()
            )));
        }
        Ok(data::scale_features(&raw, d.scaling))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Centralized baseline after training.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedRun {
    pub model: MlpModel,
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Training loss before each update.
    pub loss_trace: Vec<f64>,
    pub baseline: ConvergenceBaseline,
    pub test_predictions: Vec<f64>,
}

/// Seed of the model initialised for `node`; the centralized model uses node 0's.
pub fn model_seed(trial_seed: u64, node: usize) -> u64 {
    rng::derive_seed(trial_seed, Stream::ModelInit, node as u64)
}

/// Full-feature MLP (`n -> H_C -> 1`) trained by gradient descent with the
/// same loss, reduction and stopping rule as the gossip trainer.
pub fn run_centralized(cfg: &ExperimentConfig, ds: &Dataset, seed: u64) -> Result<CentralizedRun> {
    let tc = cfg.training_config();
    tc.validate()?;
    let specs = architecture(ds.n_features(), &[cfg.training.hidden_neurons_centralized], cfg.training.hidden_activation);
    let mut model = MlpModel::init(&specs, model_seed(seed, 0))?;
    let mut batch_rng = rng::stream(seed, Stream::Minibatch, 0);
    let y = &ds.y_train;
    let mut loss_trace = Vec::new();
    let mut rms = Vec::new();
    let mut converged = false;
    for it in 1..=tc.max_rounds {
        let rows = draw_batch(y.len(), tc.minibatch, &mut batch_rng);
        let (x_b, y_b) = match &rows {
            Some(r) => (Cow::Owned(ds.x_train.select_rows(r)), r.iter().map(|&k| y[k]).collect()),
            None => (Cow::Borrowed(&ds.x_train), y.clone()),
        };
        let trace = model.forward_batch(&x_b)?;
        let pred = trace.predictions();
        let loss = nn::compute_loss(tc.loss, &y_b, &pred)?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite centralized loss at iteration {it}")));
        }
        loss_trace.push(loss);
        let reduce = tc.reduction.factor(y_b.len());
        let mut residual = nn::output_residual(tc.loss, &y_b, &pred)?;
        if reduce != 1.0 {
            residual.iter_mut().for_each(|r| *r *= reduce);
        }
        let grads = model.backward(&trace, &residual)?;
        let before = model.parameters();
        model
            .sgd_step(&grads, tc.learning_rate)
            .map_err(|_| Error::Divergence(format!("non-finite centralized update at iteration {it}")))?;
        let delta = model.parameters().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rms.push(model.rms_norm());
        if delta < tc.stop_tol {
            converged = true;
            break;
        }
    }
    let test_predictions = model.batch_predict(&ds.x_test)?;
    let theta = metrics::roc_auc(&ds.y_test, &test_predictions)?.theta;
    Ok(CentralizedRun {
        iterations: loss_trace.len(),
        model,
        theta,
        converged,
        loss_trace,
        baseline: ConvergenceBaseline { rms_per_iteration: rms },
        test_predictions,
    })
}

/// One distributed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub theta_distributed: f64,
    pub theta_centralized: Option<f64>,
    /// `None` when the AUC is 0 or 1 and the variance is degenerate.
    pub ci: Option<ConfidenceInterval>,
    pub rounds_used: usize,
    pub centralized_iterations: Option<usize>,
    pub converged: bool,
    pub convergence_trace: Vec<f64>,
    pub rounds: Vec<RoundLog>,
    pub test_predictions: Vec<f64>,
    pub roc: Vec<RocPoint>,
    pub nodes: Vec<NodeState>,
}

fn degenerate_ok(r: Result<ConfidenceInterval>) -> Result<Option<ConfidenceInterval>> {
    match r {
        Ok(ci) => Ok(Some(ci)),
        Err(Error::DegenerateVariance(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Partitions features (seeded by the trial seed), trains every node by
/// gossip and scores the averaged test predictions.
pub fn run_distributed(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
    baseline: Option<&CentralizedRun>,
) -> Result<TrialResult> {
    let m = cfg.network.m;
    let overlap = OverlapSpec::new(cfg.network.overlap_ratio)?;
    let partition = data::make_partition(ds.n_features(), m, overlap, seed)?;
    let topo = gossip::build_topology(cfg.network.topology, m, seed)?;
    let hidden = cfg.hidden_per_node();
    let local: Vec<NodeData> = (0..m).map(|i| data::project(ds, &partition, i)).collect::<Result<_>>()?;
    let mut nodes = Vec::with_capacity(m);
    for (i, nd) in local.iter().enumerate() {
        let specs = architecture(nd.x_train.cols(), &[hidden], cfg.training.hidden_activation);
        let model = MlpModel::init(&specs, model_seed(seed, i))?;
        let mut node = NodeState::new(i, model, partition.assignments[i].clone());
        node.refresh(&nd.x_train, &ds.y_train, cfg.training.loss)?;
        nodes.push(node);
    }
    let train: Vec<Matrix> = local.iter().map(|d| d.x_train.clone()).collect();
    let test: Vec<Matrix> = local.into_iter().map(|d| d.x_test).collect();
    let tc = cfg.training_config();
    let run = gossip::run_training(
        &mut nodes,
        &topo,
        &train,
        &ds.y_train,
        &tc,
        seed,
        baseline.map(|b| &b.baseline),
    )?;
    let models: Vec<&MlpModel> = nodes.iter().map(|n| &n.model).collect();
    let preds = gossip::distributed_predict(&models, &test)?;
    let theta = metrics::roc_auc(&ds.y_test, &preds)?.theta;
    let ci = degenerate_ok(metrics::hanley_mcneil_ci(theta, ds.y_test.len()))?;
    Ok(TrialResult {
        seed,
        theta_distributed: theta,
        theta_centralized: baseline.map(|b| b.theta),
        ci,
        rounds_used: run.rounds_used(),
        centralized_iterations: baseline.map(|b| b.iterations),
        converged: run.converged,
        convergence_trace: run.rounds.iter().filter_map(|r| r.convergence_metric).collect(),
        roc: metrics::roc_curve(&ds.y_test, &preds)?,
        rounds: run.rounds,
        test_predictions: preds,
        nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: &[f64]) -> Result<Self> {
        let (mean, sd) = metrics::mean_and_sd(values)?;
        Ok(MeanSd { mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub seed: u64,
    pub theta_centralized: Option<f64>,
    pub theta_distributed: Option<f64>,
    pub ci: Option<ConfidenceInterval>,
    pub centralized_iterations: Option<usize>,
    pub distributed_rounds: Option<usize>,
    pub centralized_converged: Option<bool>,
    pub distributed_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub n_features: usize,
}

/// The aggregated row written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub dataset: DatasetSummary,
    pub m: usize,
    pub topology: TopologyKind,
    pub overlap_ratio: f64,
    pub hidden_neurons_centralized: usize,
    pub hidden_neurons_per_node: usize,
    pub learning_rate: f64,
    pub seeds: Vec<u64>,
    pub theta_centralized: Option<MeanSd>,
    pub theta_distributed: Option<MeanSd>,
    /// Hanley-McNeil interval around the mean distributed AUC.
    pub ci: Option<ConfidenceInterval>,
    pub iterations_centralized: Option<MeanSd>,
    pub rounds_distributed: Option<MeanSd>,
    /// Mean centralized AUC lies inside the distributed interval.
    pub comparable: Option<bool>,
    pub trials: Vec<TrialSummary>,
}

/// Which halves of a suite to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteMode {
    Both,
    CentralizedOnly,
    DistributedOnly,
}

/// Per-seed outputs kept for artifact writing.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub seed: u64,
    pub centralized: Option<CentralizedRun>,
    pub distributed: Option<TrialResult>,
}

pub struct SuiteRun {
    pub report: SuiteReport,
    pub outcomes: Vec<TrialOutcome>,
}

fn run_trial(cfg: &ExperimentConfig, ds: &Dataset, seed: u64, mode: SuiteMode) -> Result<TrialOutcome> {
    let centralized = match mode {
        SuiteMode::DistributedOnly => None,
        _ => Some(run_centralized(cfg, ds, seed)?),
    };
    let distributed = match mode {
        SuiteMode::CentralizedOnly => None,
        _ => Some(run_distributed(cfg, ds, seed, centralized.as_ref())?),
    };
    Ok(TrialOutcome { seed, centralized, distributed })
}

/// Runs trials with at most `parallel` in flight, returning them in seed
/// order. On failure the completed trials are handed back with the error.
pub fn run_trials(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    mode: SuiteMode,
    parallel: usize,
) -> std::result::Result<Vec<TrialOutcome>, (Vec<TrialOutcome>, Error)> {
    let mut done = Vec::with_capacity(cfg.seeds.len());
    for chunk in cfg.seeds.chunks(parallel.max(1)) {
        let results: Vec<Result<TrialOutcome>> = if chunk.len() == 1 {
            vec![run_trial(cfg, ds, chunk[0], mode)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> =
                    chunk.iter().map(|&seed| s.spawn(move || run_trial(cfg, ds, seed, mode))).collect();
                handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
            })
        };
        for r in results {
            match r {
                Ok(t) => {
                    log::info!("trial seed {} finished", t.seed);
                    done.push(t)
                }
                Err(e) => return Err((done, e)),
            }
        }
    }
    Ok(done)
}

/// Aggregates completed trials into the report row.
pub fn summarize(cfg: &ExperimentConfig, ds: &Dataset, outcomes: &[TrialOutcome]) -> Result<SuiteReport> {
    let thetas_c: Vec<f64> = outcomes.iter().filter_map(|o| o.centralized.as_ref().map(|c| c.theta)).collect();
    let thetas_d: Vec<f64> =
        outcomes.iter().filter_map(|o| o.distributed.as_ref().map(|d| d.theta_distributed)).collect();
    let iters_c: Vec<f64> =
        outcomes.iter().filter_map(|o| o.centralized.as_ref().map(|c| c.iterations as f64)).collect();
    let rounds_d: Vec<f64> =
        outcomes.iter().filter_map(|o| o.distributed.as_ref().map(|d| d.rounds_used as f64)).collect();
    let opt = |v: &[f64]| if v.is_empty() { Ok(None) } else { MeanSd::of(v).map(Some) };
    let theta_centralized = opt(&thetas_c)?;
    let theta_distributed = opt(&thetas_d)?;
    let ci = match &theta_distributed {
        Some(d) => degenerate_ok(metrics::hanley_mcneil_ci(d.mean, ds.y_test.len()))?,
        None => None,
    };
    let comparable = match (&theta_centralized, &theta_distributed) {
        (Some(c), Some(d)) => Some(match &ci {
            Some(ci) => ci.contains(c.mean),
            None => c.mean == d.mean,
        }),
        _ => None,
    };
    Ok(SuiteReport {
        name: cfg.name.clone(),
        dataset: DatasetSummary { n_train: ds.x_train.rows(), n_test: ds.x_test.rows(), n_features: ds.n_features() },
        m: cfg.network.m,
        topology: cfg.network.topology,
        overlap_ratio: cfg.network.overlap_ratio,
        hidden_neurons_centralized: cfg.training.hidden_neurons_centralized,
        hidden_neurons_per_node: cfg.hidden_per_node(),
        learning_rate: cfg.training.learning_rate,
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        theta_centralized,
        theta_distributed,
        ci,
        iterations_centralized: opt(&iters_c)?,
        rounds_distributed: opt(&rounds_d)?,
        comparable,
        trials: outcomes
            .iter()
            .map(|o| TrialSummary {
                seed: o.seed,
                theta_centralized: o.centralized.as_ref().map(|c| c.theta),
                theta_distributed: o.distributed.as_ref().map(|d| d.theta_distributed),
                ci: o.distributed.as_ref().and_then(|d| d.ci),
                centralized_iterations: o.centralized.as_ref().map(|c| c.iterations),
                distributed_rounds: o.distributed.as_ref().map(|d| d.rounds_used),
                centralized_converged: o.centralized.as_ref().map(|c| c.converged),
                distributed_converged: o.distributed.as_ref().map(|d| d.converged),
            })
            .collect(),
    })
}

/// Runs centralized and distributed training for every seed and aggregates.
pub fn run_suite(cfg: &ExperimentConfig, ds: &Dataset, parallel: usize) -> Result<SuiteRun> {
    run_suite_mode(cfg, ds, SuiteMode::Both, parallel)
}

pub fn run_suite_mode(cfg: &ExperimentConfig, ds: &Dataset, mode: SuiteMode, parallel: usize) -> Result<SuiteRun> {
    let outcomes = run_trials(cfg, ds, mode, parallel).map_err(|(_, e)| e)?;
    Ok(SuiteRun { report: summarize(cfg, ds, &outcomes)?, outcomes })
}

/// The standard overlap grid `0, 0.2, ..., 1.0`.
pub fn default_overlap_grid() -> Vec<f64> {
    (0..=5).map(|i| i as f64 / 5.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub overlap_ratio: f64,
    pub theta_distributed: MeanSd,
    pub ci: Option<ConfidenceInterval>,
    pub rounds_distributed: MeanSd,
    pub theta_centralized: Option<MeanSd>,
}

/// Distributed AUC at each overlap ratio, averaged over the config's seeds.
/// The centralized baseline does not depend on overlap and is trained once per seed.
pub fn run_overlap_sweep(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    grid: &[f64],
    with_centralized: bool,
) -> Result<Vec<SweepRow>> {
    let centralized: Vec<Option<CentralizedRun>> = cfg
        .seeds
        .iter()
        .map(|&s| if with_centralized { run_centralized(cfg, ds, s).map(Some) } else { Ok(None) })
        .collect::<Result<_>>()?;
    let theta_c: Vec<f64> = centralized.iter().flatten().map(|c| c.theta).collect();
    let mut rows = Vec::with_capacity(grid.len());
    for &ratio in grid {
        let mut c = cfg.clone();
        c.network.overlap_ratio = ratio;
        OverlapSpec::new(ratio)?;
        let mut thetas = Vec::new();
        let mut rounds = Vec::new();
        for (&seed, cent) in c.seeds.iter().zip(&centralized) {
            let t = run_distributed(&c, ds, seed, cent.as_ref())?;
            thetas.push(t.theta_distributed);
            rounds.push(t.rounds_used as f64);
        }
        let theta_distributed = MeanSd::of(&thetas)?;
        rows.push(SweepRow {
            overlap_ratio: ratio,
            ci: degenerate_ok(metrics::hanley_mcneil_ci(theta_distributed.mean, ds.y_test.len()))?,
            theta_distributed,
            rounds_distributed: MeanSd::of(&rounds)?,
            theta_centralized: if theta_c.is_empty() { None } else { Some(MeanSd::of(&theta_c)?) },
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("overlap_ratio,theta_distributed_mean,theta_distributed_sd,ci_lower,ci_upper,rounds_mean,theta_centralized_mean\n");
    for r in rows {
        let (lo, hi) = r.ci.map(|c| (c.lower.to_string(), c.upper.to_string())).unwrap_or_default();
        let tc = r.theta_centralized.as_ref().map(|t| t.mean.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.overlap_ratio, r.theta_distributed.mean, r.theta_distributed.sd, lo, hi, r.rounds_distributed.mean, tc
        ));
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// Writes per-trial CSVs under `out_dir/trials/<seed>/` and `convergence.csv`.
pub fn write_trial_artifacts(out_dir: &Path, outcomes: &[TrialOutcome]) -> Result<()> {
    let mut convergence = String::from("seed,round,convergence_metric\n");
    let mut any_convergence = false;
    for o in outcomes {
        let dir = out_dir.join("trials").join(o.seed.to_string());
        if let Some(d) = &o.distributed {
            write(&dir.join("rounds.csv"), &gossip::rounds_to_csv(&d.rounds))?;
            write(&dir.join("roc.csv"), &metrics::roc_to_csv(&d.roc))?;
            let mut preds = String::from("row,distributed_probability\n");
            for (i, p) in d.test_predictions.iter().enumerate() {
                preds.push_str(&format!("{i},{p}\n"));
            }
            write(&dir.join("predictions.csv"), &preds)?;
            for r in &d.rounds {
                if let Some(v) = r.convergence_metric {
                    any_convergence = true;
                    convergence.push_str(&format!("{},{},{}\n", o.seed, r.round, v));
                }
            }
        }
        if let Some(c) = &o.centralized {
            let mut s = String::from("iteration,loss\n");
            for (i, l) in c.loss_trace.iter().enumerate() {
                s.push_str(&format!("{},{}\n", i + 1, l));
            }
            write(&dir.join("centralized_loss.csv"), &s)?;
        }
    }
    if any_convergence {
        write(&out_dir.join("convergence.csv"), &convergence)?;
    }
    Ok(())
}

/// Runs a suite and writes `report.json` plus per-trial artifacts. When a
/// trial fails, artifacts of the completed trials and a partial report are
/// still written before the error is returned.
pub fn run_suite_to_dir(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    mode: SuiteMode,
    parallel: usize,
    out_dir: &Path,
) -> Result<SuiteReport> {
    match run_trials(cfg, ds, mode, parallel) {
        Ok(outcomes) => {
            write_trial_artifacts(out_dir, &outcomes)?;
            let report = summarize(cfg, ds, &outcomes)?;
            write(&out_dir.join("report.json"), &to_json(&report))?;
            Ok(report)
        }
        Err((partial, err)) => {
            write_trial_artifacts(out_dir, &partial)?;
            if !partial.is_empty() {
                if let Ok(report) = summarize(cfg, ds, &partial) {
                    write(&out_dir.join("partial_report.json"), &to_json(&report))?;
                }
            }
            Err(err)
        }
    }
}

pub fn write_sweep(out_dir: &Path, rows: &[SweepRow]) -> Result<()> {
    write(&out_dir.join("overlap_sweep.csv"), &sweep_to_csv(rows))?;
    write(&out_dir.join("overlap_sweep.json"), &to_json(&rows))
}
