//! Test-only oracles. Nothing here calls the library's forward, backward or
//! AUC code; parameters are read from models but all arithmetic is redone
//! with plain loops.

#![allow(dead_code)]

use dmlp::nn::{Activation, LossKind, MlpModel, PROB_CLAMP};
use dmlp::Matrix;

pub fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Linear => x,
    }
}

/// Layer-by-layer evaluation using `a_j = b_j + sum_i o_i * w_ji`.
/// Returns per-layer pre-activations and the prediction.
pub fn naive_forward(model: &MlpModel, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let mut input = x.to_vec();
    let mut pres = Vec::new();
    for layer in model.layers() {
        let mut out = Vec::new();
        let mut pre = Vec::new();
        for j in 0..layer.spec.out_units {
            let mut a = layer.biases[j];
            for (i, v) in input.iter().enumerate() {
                a += v * layer.weights.get(j, i);
            }
            pre.push(a);
            out.push(act(layer.spec.activation, a));
        }
        pres.push(pre);
        input = out;
    }
    (pres, input[0])
}

pub fn naive_predict(model: &MlpModel, x: &Matrix) -> Vec<f64> {
    (0..x.rows()).map(|i| naive_forward(model, x.row(i)).1).collect()
}

pub fn naive_loss(kind: LossKind, y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += match kind {
            LossKind::SquaredError => 0.5 * (y[i] - p[i]).powi(2),
            LossKind::CrossEntropy => {
                let c = p[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y[i] * c.ln() + (1.0 - y[i]) * (1.0 - c).ln())
            }
        };
    }
    s
}

/// Central finite differences of `f` with respect to every flattened parameter.
pub fn finite_difference(model: &MlpModel, h: f64, f: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
    let base = model.parameters();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_parameters(&p).unwrap();
        let plus = f(&probe);
        p[k] = base[k] - h;
        probe.set_parameters(&p).unwrap();
        let minus = f(&probe);
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// `|a - b|` measured against the tolerance `max(rel * max(|a|, |b|), abs)`;
/// values up to 1 are within tolerance.
pub fn tolerance_ratio(a: f64, b: f64, rel: f64, abs: f64) -> f64 {
    (a - b).abs() / (rel * a.abs().max(b.abs())).max(abs)
}

/// O(n_pos * n_neg) pairwise AUC.
pub fn brute_force_auc(y: &[f64], s: &[f64]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for i in 0..y.len() {
        if y[i] != 1.0 {
            continue;
        }
        for j in 0..y.len() {
            if y[j] != 0.0 {
                continue;
            }
            pairs += 1.0;
            if s[i] > s[j] {
                credit += 1.0;
            } else if s[i] == s[j] {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

pub fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..rows * cols)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}
