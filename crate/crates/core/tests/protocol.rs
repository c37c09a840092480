#![allow(clippy::needless_range_loop)]

mod common;

use common::lcg_matrix;
use dmlp::experiment::{run_centralized, run_distributed, run_overlap_sweep, ExperimentConfig};
use dmlp::gossip::{build_topology, run_round, run_training, NodeState, TopologyKind, TrainingConfig, TrainingRngs};
use dmlp::nn::{architecture, Activation, Layer, LayerSpec, LossKind, MlpModel};
use dmlp::Matrix;

/// Plain-vector copy of a one-hidden-layer sigmoid network.
#[derive(Clone)]
struct Net {
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Net {
    fn from_model(m: &MlpModel) -> Net {
        let l = m.layers();
        let w1 = (0..l[0].spec.out_units).map(|j| (0..l[0].spec.in_units).map(|i| l[0].weights.get(j, i)).collect()).collect();
        Net { w1, b1: l[0].biases.clone(), w2: (0..l[1].spec.in_units).map(|j| l[1].weights.get(0, j)).collect(), b2: l[1].biases[0] }
    }

    fn hidden(&self, x: &[f64]) -> Vec<f64> {
        self.w1.iter().zip(&self.b1).map(|(w, b)| sig(b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())).collect()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let h = self.hidden(x);
        sig(self.b2 + self.w2.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>())
    }

    /// One SGD step given dL/dp for every row.
    fn step(&mut self, x: &Matrix, dl_dp: &[f64], lr: f64) {
        let mut g = Net { w1: vec![vec![0.0; x.cols()]; self.b1.len()], b1: vec![0.0; self.b1.len()], w2: vec![0.0; self.w2.len()], b2: 0.0 };
        for k in 0..x.rows() {
            let row = x.row(k);
            let h = self.hidden(row);
            let p = self.predict(row);
            let d_out = dl_dp[k] * p * (1.0 - p);
            g.b2 += d_out;
            for j in 0..h.len() {
                g.w2[j] += d_out * h[j];
                let d_h = d_out * self.w2[j] * h[j] * (1.0 - h[j]);
                g.b1[j] += d_h;
                for i in 0..row.len() {
                    g.w1[j][i] += d_h * row[i];
                }
            }
        }
        self.b2 -= lr * g.b2;
        for j in 0..self.w2.len() {
            self.w2[j] -= lr * g.w2[j];
            self.b1[j] -= lr * g.b1[j];
            for i in 0..self.w1[j].len() {
                self.w1[j][i] -= lr * g.w1[j][i];
            }
        }
    }

    fn max_diff(&self, m: &MlpModel) -> f64 {
        let o = Net::from_model(m);
        let mut d: f64 = (self.b2 - o.b2).abs();
        for j in 0..self.w2.len() {
            d = d.max((self.w2[j] - o.w2[j]).abs()).max((self.b1[j] - o.b1[j]).abs());
            for i in 0..self.w1[j].len() {
                d = d.max((self.w1[j][i] - o.w1[j][i]).abs());
            }
        }
        d
    }
}

#[test]
fn two_node_round_matches_hand_stepped_oracle() {
    let x = [lcg_matrix(8, 3, 1), lcg_matrix(8, 2, 2)];
    let y: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
    let models = [
        MlpModel::init(&architecture(3, &[2], Activation::Sigmoid), 10).unwrap(),
        MlpModel::init(&architecture(2, &[2], Activation::Sigmoid), 11).unwrap(),
    ];
    let mut oracle = [Net::from_model(&models[0]), Net::from_model(&models[1])];
    let mut nodes: Vec<NodeState> =
        models.iter().enumerate().map(|(i, m)| NodeState::new(i, m.clone(), vec![])).collect();
    let topo = build_topology(TopologyKind::Complete, 2, 0).unwrap();
    let cfg = TrainingConfig { loss: LossKind::SquaredError, learning_rate: 0.3, ..TrainingConfig::default() };
    let mut rngs = TrainingRngs::from_seed(0);
    let n = y.len() as f64;

    for round in 1..=5 {
        run_round(&mut nodes, &topo, &x, &y, &cfg, round, &mut rngs).unwrap();
        for (t, u) in [(0, 1), (1, 0)] {
            let pt: Vec<f64> = (0..8).map(|k| oracle[t].predict(x[t].row(k))).collect();
            let pu: Vec<f64> = (0..8).map(|k| oracle[u].predict(x[u].row(k))).collect();
            let dl: Vec<f64> = (0..8).map(|k| 0.5 * ((pt[k] + pu[k]) / 2.0 - y[k]) / n).collect();
            oracle[t].step(&x[t], &dl, cfg.learning_rate);
            oracle[u].step(&x[u], &dl, cfg.learning_rate);
        }
        for i in 0..2 {
            let d = oracle[i].max_diff(&nodes[i].model);
            assert!(d <= 1e-12, "round {round} node {i}: {d}");
        }
    }
}

const LINEAR: &str = r#"
name = "protocol"
seeds = [3]
[dataset]
source = "linear_teacher"
n_train = 400
n_test = 200
n_features = 12
[training]
hidden_neurons_centralized = 8
learning_rate = 0.5
T = 100
[network]
m = 4
"#;

fn cfg(overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let c = ExperimentConfig::from_toml_str(LINEAR, &o).unwrap();
    c.validate().unwrap();
    c
}

#[test]
fn single_node_reproduces_centralized_training() {
    let c = cfg(&["network.m=1", "training.T=50", "training.stop_tol=0.0"]);
    let ds = c.load_dataset().unwrap();
    let cent = run_centralized(&c, &ds, 3).unwrap();
    let dist = run_distributed(&c, &ds, 3, Some(&cent)).unwrap();
    assert_eq!(cent.iterations, 50);
    assert_eq!(dist.rounds_used, 50);
    let d = cent.model.max_abs_diff(&dist.nodes[0].model);
    assert!(d <= 1e-12, "{d}");
    assert!(dist.convergence_trace.iter().all(|&v| v <= 1e-12));
    assert!((cent.theta - dist.theta_distributed).abs() <= 1e-12);
}

/// Each node sees the full separating rule; with disjoint slices the
/// pairwise fixed point is not the full-feature predictor.
#[test]
fn separable_problem_is_learned_by_four_nodes() {
    let c = cfg(&["network.overlap_ratio=1.0"]);
    let ds = c.load_dataset().unwrap();
    for seed in 0..3 {
        let t = run_distributed(&c, &ds, seed, None).unwrap();
        assert!(t.rounds_used <= 100);
        assert!(t.theta_distributed >= 0.95, "seed {seed}: {}", t.theta_distributed);
    }
}

#[test]
fn trials_are_deterministic() {
    let c = cfg(&["training.T=20", "network.topology=\"ring\""]);
    let ds = c.load_dataset().unwrap();
    let a = run_distributed(&c, &ds, 7, None).unwrap();
    let b = run_distributed(&c, &ds, 7, None).unwrap();
    assert_eq!(a.test_predictions, b.test_predictions);
    assert_eq!(a.rounds, b.rounds);
    let other = run_distributed(&c, &ds, 8, None).unwrap();
    assert_ne!(a.test_predictions, other.test_predictions);
}

#[test]
fn infinite_tolerance_stops_after_one_round() {
    let c = cfg(&["training.stop_tol=inf"]);
    let ds = c.load_dataset().unwrap();
    let t = run_distributed(&c, &ds, 3, None).unwrap();
    assert_eq!(t.rounds_used, 1);
    assert!(t.converged);
}

#[test]
fn zero_learning_rate_stops_after_one_round_unchanged() {
    let c = cfg(&["training.learning_rate=0.0"]);
    let ds = c.load_dataset().unwrap();
    let t = run_distributed(&c, &ds, 3, None).unwrap();
    assert_eq!(t.rounds_used, 1);
    assert_eq!(t.rounds[0].max_weight_delta, 0.0);
}

/// Linear hidden unit passing the single feature through, then a steep sigmoid.
fn saturated_node() -> MlpModel {
    MlpModel::from_layers(vec![
        Layer {
            spec: LayerSpec::new(1, 1, Activation::Linear),
            weights: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            biases: vec![0.0],
        },
        Layer {
            spec: LayerSpec::new(1, 1, Activation::Sigmoid),
            weights: Matrix::from_vec(1, 1, vec![60.0]).unwrap(),
            biases: vec![0.0],
        },
    ])
    .unwrap()
}

#[test]
fn perfectly_fitting_nodes_are_a_fixed_point() {
    let x = Matrix::from_vec(6, 1, vec![1.0, -1.0, 2.0, -2.0, 1.5, -0.5]).unwrap();
    let y = vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
    for loss in LossKind::ALL {
        let mut nodes: Vec<NodeState> = (0..3).map(|i| NodeState::new(i, saturated_node(), vec![0])).collect();
        let topo = build_topology(TopologyKind::Complete, 3, 0).unwrap();
        let data = vec![x.clone(), x.clone(), x.clone()];
        let cfg = TrainingConfig { loss, learning_rate: 0.5, ..TrainingConfig::default() };
        let run = run_training(&mut nodes, &topo, &data, &y, &cfg, 1, None).unwrap();
        assert_eq!(run.rounds_used(), 1, "{loss:?}");
        for n in &nodes {
            assert!(n.model.max_abs_diff(&saturated_node()) < 1e-12, "{loss:?}");
        }
    }
}

#[test]
fn divergence_names_round_and_node() {
    let c = cfg(&["training.learning_rate=1e300", "training.T=5"]);
    let ds = c.load_dataset().unwrap();
    let err = run_distributed(&c, &ds, 3, None).unwrap_err();
    assert!(err.is_divergence(), "{err}");
    let msg = err.to_string();
    assert!(msg.contains("round") && msg.contains("node"), "{msg}");
}

#[test]
fn more_overlap_does_not_hurt_on_average() {
    let mut c = cfg(&["training.T=60"]);
    c.set_seeds(vec![1, 2]);
    let ds = c.load_dataset().unwrap();
    let rows = run_overlap_sweep(&c, &ds, &[0.0, 1.0], false).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].theta_distributed.mean >= rows[0].theta_distributed.mean, "{rows:?}");
}
