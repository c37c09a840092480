//! Dense multi-layer perceptron.
//!
//! Weights of layer `k` form an `out_units x in_units` row-major matrix, so
//! `a^k = b^k + W^k o^{k-1}` and `o^k = act(a^k)`. The output layer is a
//! single sigmoid unit.
//!
//! [`MlpModel::backward`] takes the derivative of the loss with respect to
//! the network output (`output_residual`) from the caller instead of a
//! target vector. That is what lets a gossip node backpropagate a loss that
//! depends on a neighbour's predictions as well as its own.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::SimRng;
use crate::{Error, Result};

/// Lower clamp applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative at pre-activation `pre`, given `out = apply(pre)`.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Linear => 1.0,
        }
    }

    pub const ALL: [Activation; 4] =
        [Activation::Sigmoid, Activation::Relu, Activation::Tanh, Activation::Linear];
}

/// Numerically stable logistic function. Strictly inside (0, 1) for |x| < ~36.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredError,
    CrossEntropy,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::SquaredError, LossKind::CrossEntropy];
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Summed loss over all examples.
///
/// Squared error is `0.5 * sum (y - yhat)^2`; cross-entropy clamps `yhat`
/// to `[1e-7, 1 - 1e-7]` before taking logs.
pub fn compute_loss(kind: LossKind, y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len(y, yhat)?;
    let total = match kind {
        LossKind::SquaredError => {
            0.5 * y.iter().zip(yhat).map(|(t, p)| (t - p) * (t - p)).sum::<f64>()
        }
        LossKind::CrossEntropy => y
            .iter()
            .zip(yhat)
            .map(|(&t, &p)| {
                let c = clamp_prob(p);
                -(t * c.ln() + (1.0 - t) * (1.0 - c).ln())
            })
            .sum::<f64>(),
    };
    Ok(total)
}

/// Per-example derivative of the loss with respect to the prediction,
/// evaluated at `at`.
///
/// For a local loss `at` is the node's own prediction. For a gossiped loss
/// `at` is the averaged prediction and the caller applies the chain factor.
pub fn output_residual(kind: LossKind, y: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    check_len(y, at)?;
    Ok(y.iter()
        .zip(at)
        .map(|(&t, &p)| match kind {
            LossKind::SquaredError => p - t,
            LossKind::CrossEntropy => {
                let c = clamp_prob(p);
                (c - t) / (c * (1.0 - c))
            }
        })
        .collect())
}

fn check_len(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Input(format!(
            "label vector has length {}, prediction vector has length {}",
            y.len(),
            yhat.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_units: usize,
    pub out_units: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_units: usize, out_units: usize, activation: Activation) -> Self {
        LayerSpec { in_units, out_units, activation }
    }
}

/// Layer specs for `inputs -> hidden[0] -> ... -> 1 (sigmoid)`.
pub fn architecture(inputs: usize, hidden: &[usize], hidden_activation: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = inputs;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, hidden_activation));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, 1, Activation::Sigmoid));
    specs
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    let Some(last) = specs.last() else {
        return Err(Error::Config("model needs at least one layer".into()));
    };
    for (k, s) in specs.iter().enumerate() {
        if s.in_units == 0 || s.out_units == 0 {
            return Err(Error::Config(format!("layer {k} has a zero-width dimension")));
        }
        if k > 0 && s.in_units != specs[k - 1].out_units {
            return Err(Error::Config(format!(
                "layer {k} expects {} inputs but layer {} produces {}",
                s.in_units,
                k - 1,
                specs[k - 1].out_units
            )));
        }
    }
    if last.out_units != 1 || last.activation != Activation::Sigmoid {
        return Err(Error::Config("output layer must be a single sigmoid unit".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `out_units x in_units`.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

/// Activations of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub prediction: f64,
}

/// Activations of a batch, one `rows x units` matrix per layer.
#[derive(Debug, Clone)]
pub struct BatchTrace<'a> {
    pub input: &'a Matrix,
    pub pre_activations: Vec<Matrix>,
    pub outputs: Vec<Matrix>,
}

impl BatchTrace<'_> {
    pub fn len(&self) -> usize {
        self.input.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.rows() == 0
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.outputs.last().map(|m| m.as_slice().to_vec()).unwrap_or_default()
    }
}

/// Gradients with the same shapes as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: model
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.spec.out_units, l.spec.in_units))
                .collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.spec.out_units]).collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .flat_map(|w| w.as_slice().iter().copied())
            .chain(self.biases.iter().flat_map(|b| b.iter().copied()))
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Flattened in the same order as [`MlpModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl MlpModel {
    /// Weights i.i.d. uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = SimRng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let bound = 1.0 / (spec.in_units as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let data = (0..spec.in_units * spec.out_units).map(|_| dist.sample(&mut rng)).collect();
                Layer {
                    spec,
                    weights: Matrix::from_vec(spec.out_units, spec.in_units, data)
                        .expect("sized by construction"),
                    biases: vec![0.0; spec.out_units],
                }
            })
            .collect();
        Ok(MlpModel { layers })
    }

    /// Assembles a model from explicit layers.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for (k, l) in layers.iter().enumerate() {
            if l.weights.rows() != l.spec.out_units
                || l.weights.cols() != l.spec.in_units
                || l.biases.len() != l.spec.out_units
            {
                return Err(Error::Config(format!("layer {k} parameter shapes do not match its spec")));
            }
        }
        Ok(MlpModel { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].spec.in_units
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.spec.out_units * (l.spec.in_units + 1)).sum()
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    /// Inverse of [`MlpModel::parameters`].
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.as_slice().len());
            l.weights.as_mut_slice().copy_from_slice(w);
            let (b, tail) = tail.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// `||w||_2 / sqrt(dim w)` over the flattened parameter vector.
    pub fn rms_norm(&self) -> f64 {
        let p = self.parameters();
        (p.iter().map(|x| x * x).sum::<f64>() / p.len() as f64).sqrt()
    }

    /// Largest absolute parameter difference between two models of the same shape.
    pub fn max_abs_diff(&self, other: &MlpModel) -> f64 {
        self.parameters()
            .iter()
            .zip(other.parameters())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.as_slice().iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_width() {
            return Err(Error::Input(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_width()
            )));
        }
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = outputs.last().map_or(x, Vec::as_slice);
            let mut a = layer.biases.clone();
            affine_into(layer, prev, &mut a);
            let o = a.iter().map(|&v| layer.spec.activation.apply(v)).collect();
            pre_activations.push(a);
            outputs.push(o);
        }
        let prediction = outputs.last().expect("at least one layer")[0];
        Ok(ForwardTrace { pre_activations, outputs, prediction })
    }

    pub fn forward_batch<'a>(&self, x: &'a Matrix) -> Result<BatchTrace<'a>> {
        if x.cols() != self.input_width() && x.rows() > 0 {
            return Err(Error::Input(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_width()
            )));
        }
        let n = x.rows();
        let mut pre_activations: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let width = layer.spec.out_units;
            let mut a = Matrix::zeros(n, width);
            let mut o = Matrix::zeros(n, width);
            {
                let prev = outputs.last().unwrap_or(x);
                for i in 0..n {
                    let row = a.row_mut(i);
                    row.copy_from_slice(&layer.biases);
                    affine_into(layer, prev.row(i), row);
                }
            }
            let act = layer.spec.activation;
            for (dst, &src) in o.as_mut_slice().iter_mut().zip(a.as_slice()) {
                *dst = act.apply(src);
            }
            pre_activations.push(a);
            outputs.push(o);
        }
        Ok(BatchTrace { input: x, pre_activations, outputs })
    }

    /// Predicted probabilities for every row of `x`.
    pub fn batch_predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.rows() == 0 {
            return Ok(Vec::new());
        }
        Ok(self.forward_batch(x)?.predictions())
    }

    /// Backpropagates `output_residual[i] = dL/dyhat_i` through `trace`.
    ///
    /// Gradients are summed over the batch; callers wanting a mean scale the
    /// residual.
    pub fn backward(&self, trace: &BatchTrace<'_>, output_residual: &[f64]) -> Result<Gradients> {
        let n = trace.len();
        if output_residual.len() != n {
            return Err(Error::Input(format!(
                "residual has length {}, batch has {n} rows",
                output_residual.len()
            )));
        }
        if trace.outputs.len() != self.layers.len()
            || trace
                .outputs
                .iter()
                .zip(&self.layers)
                .any(|(o, l)| o.cols() != l.spec.out_units || o.rows() != n)
        {
            return Err(Error::Internal("forward trace does not match model shape".into()));
        }

        let mut grads = Gradients::zeros_like(self);
        let depth = self.layers.len();
        let max_width = self.layers.iter().map(|l| l.spec.in_units.max(l.spec.out_units)).max().unwrap_or(1);
        let mut delta = Vec::with_capacity(max_width);
        let mut back = Vec::with_capacity(max_width);

        for (i, &res) in output_residual.iter().enumerate() {
            // Output layer: single sigmoid unit.
            let out_layer = &self.layers[depth - 1];
            let a = trace.pre_activations[depth - 1].get(i, 0);
            let o = trace.outputs[depth - 1].get(i, 0);
            delta.clear();
            delta.push(res * out_layer.spec.activation.derivative(a, o));

            for k in (0..depth).rev() {
                let layer = &self.layers[k];
                let prev = if k == 0 { trace.input.row(i) } else { trace.outputs[k - 1].row(i) };
                let gw = &mut grads.weights[k];
                let gb = &mut grads.biases[k];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    for (g, &p) in gw.row_mut(r).iter_mut().zip(prev) {
                        *g += d * p;
                    }
                }
                if k == 0 {
                    break;
                }
                back.clear();
                back.resize(layer.spec.in_units, 0.0);
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (b, &w) in back.iter_mut().zip(layer.weights.row(r)) {
                        *b += w * d;
                    }
                }
                let below = &self.layers[k - 1];
                let pre = trace.pre_activations[k - 1].row(i);
                let out = trace.outputs[k - 1].row(i);
                for ((b, &p), &q) in back.iter_mut().zip(pre).zip(out) {
                    *b *= below.spec.activation.derivative(p, q);
                }
                std::mem::swap(&mut delta, &mut back);
            }
        }
        Ok(grads)
    }

    /// `p <- p - learning_rate * grad(p)` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {learning_rate} must be finite and non-negative")));
        }
        if grads.weights.len() != self.layers.len()
            || grads.weights.iter().zip(&self.layers).any(|(g, l)| g.rows() != l.spec.out_units || g.cols() != l.spec.in_units)
        {
            return Err(Error::Internal("gradient shapes do not match model".into()));
        }
        if !grads.is_finite() {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        for ((layer, gw), gb) in self.layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
            for (w, g) in layer.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(gb) {
                *b -= learning_rate * g;
            }
        }
        if !self.is_finite() {
            return Err(Error::Divergence("non-finite weight after update".into()));
        }
        Ok(())
    }
}

#[inline]
fn affine_into(layer: &Layer, input: &[f64], acc: &mut [f64]) {
    for (r, a) in acc.iter_mut().enumerate() {
        let w = layer.weights.row(r);
        let mut s = 0.0;
        for (wi, xi) in w.iter().zip(input) {
            s += wi * xi;
        }
        *a += s;
    }
}
