//! Feed-forward regressor with two hidden layers.
//!
//! The topology is fixed (input → ReLU → ReLU → sigmoid) so the backward pass
//! is written out by hand instead of going through a general autodiff graph.
//! All arithmetic is `f64`.

mod adadelta;

pub use adadelta::{adadelta_step, AdaDeltaConfig, AdaDeltaState};

use rand::Rng;
use thiserror::Error;

use crate::rng::{self, StreamKind};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid optimizer settings: {0}")]
    Optimizer(String),
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
}

/// Dense row-major matrix. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NnError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HiddenActivation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputActivation {
    #[default]
    Sigmoid,
}

/// Shape of the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    input_dim: usize,
    hidden_dims: [usize; 2],
    hidden_activation: HiddenActivation,
    output_activation: OutputActivation,
    output_dim: usize,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: [usize; 2], output_dim: usize) -> Result<Self, NnError> {
        if input_dim == 0 {
            return Err(NnError::Config("input_dim must be at least 1".into()));
        }
        if hidden_dims.contains(&0) {
            return Err(NnError::Config("hidden widths must be at least 1".into()));
        }
        if output_dim != 1 {
            return Err(NnError::Config(format!(
                "output_dim must be 1 (scalar CPU target), got {output_dim}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            hidden_activation: HiddenActivation::Relu,
            output_activation: OutputActivation::Sigmoid,
            output_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> [usize; 2] {
        self.hidden_dims
    }

    pub fn hidden_activation(&self) -> HiddenActivation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> [usize; 4] {
        [self.input_dim, self.hidden_dims[0], self.hidden_dims[1], self.output_dim]
    }
}

impl Default for MlpConfig {
    /// Five workload features, hidden widths 64 and 32, one output.
    fn default() -> Self {
        Self::new(5, [64, 32], 1).expect("default config is valid")
    }
}

/// Weights and biases of one dense layer. `weights` is `outputs x inputs`,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }

    pub(crate) fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Parameters of a client or global model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

/// Gradient of a scalar loss with respect to every entry of a [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    layers: Vec<Layer>,
}

macro_rules! impl_layered {
    ($ty:ty) => {
        impl $ty {
            pub fn layers(&self) -> &[Layer] {
                &self.layers
            }

            pub fn layers_mut(&mut self) -> &mut [Layer] {
                &mut self.layers
            }

            /// Total number of scalar entries.
            pub fn len(&self) -> usize {
                self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
            }

            pub fn is_empty(&self) -> bool {
                self.len() == 0
            }

            /// All entries, layer by layer, weights before biases.
            pub fn values(&self) -> impl Iterator<Item = &f64> {
                self.layers.iter().flat_map(Layer::values)
            }

            pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
                self.layers.iter_mut().flat_map(Layer::values_mut)
            }

            /// Entry `index` in the order of [`Self::values`].
            pub fn get(&self, index: usize) -> Option<f64> {
                self.values().nth(index).copied()
            }

            pub fn get_mut(&mut self, index: usize) -> Option<&mut f64> {
                self.values_mut().nth(index)
            }

            pub fn is_finite(&self) -> bool {
                self.values().all(|v| v.is_finite())
            }

            pub fn l2_norm(&self) -> f64 {
                self.values().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn same_shape_as(&self, other: &[Layer]) -> bool {
                self.layers.len() == other.len()
                    && self.layers.iter().zip(other).all(|(a, b)| a.same_shape(b))
            }
        }
    };
}

impl_layered!(ModelParams);
impl_layered!(ParamGrads);

impl ModelParams {
    /// All-zero parameters shaped by `config`.
    pub fn zeros(config: &MlpConfig) -> Self {
        let w = config.widths();
        Self { layers: w.windows(2).map(|p| Layer::zeros(p[0], p[1])).collect() }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(NnError::Shape(format!("layer {i} buffers do not match its dimensions")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(NnError::Shape(format!(
                    "layer {i} emits {} values but layer {} takes {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        if layers.last().map(|l| l.outputs) != Some(1) {
            return Err(NnError::Shape("final layer must have exactly one output".into()));
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self { layers: params.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect() }
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(config: &MlpConfig, seed: u64) -> ModelParams {
    let mut rng = rng::stream(seed, StreamKind::Init, 0, 0);
    let mut params = ModelParams::zeros(config);
    for layer in &mut params.layers {
        let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.random_range(-limit..=limit);
        }
    }
    params
}

/// Intermediates of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows
    }

    /// Pre-activations of each layer.
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    /// Post-activations of each layer; the last one holds the predictions.
    pub fn post_activations(&self) -> &[Matrix] {
        &self.post
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

fn affine(layer: &Layer, input: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(input.rows, layer.outputs);
    for r in 0..input.rows {
        let x = input.row(r);
        let dst = &mut out.data[r * layer.outputs..(r + 1) * layer.outputs];
        for (o, z) in dst.iter_mut().enumerate() {
            let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            *z = layer.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

/// Runs the network on a batch. Predictions lie in (0, 1).
pub fn forward(params: &ModelParams, features: &Matrix) -> Result<(Vec<f64>, ForwardTrace), NnError> {
    if features.cols != params.input_dim() {
        return Err(NnError::Shape(format!(
            "features have {} columns, network expects {}",
            features.cols,
            params.input_dim()
        )));
    }
    let last = params.layers.len() - 1;
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post: Vec<Matrix> = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let z = affine(layer, post.last().unwrap_or(features));
        let act: fn(f64) -> f64 = if i == last { sigmoid } else { relu };
        let a = Matrix { rows: z.rows, cols: z.cols, data: z.data.iter().map(|&v| act(v)).collect() };
        pre.push(z);
        post.push(a);
    }
    let predictions = post[last].data.clone();
    Ok((predictions, ForwardTrace { input: features.clone(), pre, post }))
}

/// Gradient of a scalar loss given `d_loss_d_pred`, the loss derivative with
/// respect to each prediction. Contributions are summed over the batch, so any
/// `1/N` of a mean reduction belongs in `d_loss_d_pred`.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, d_loss_d_pred: &[f64]) -> Result<ParamGrads, NnError> {
    let n = trace.batch_size();
    if d_loss_d_pred.len() != n {
        return Err(NnError::Shape(format!(
            "{} loss derivatives for a batch of {n}",
            d_loss_d_pred.len()
        )));
    }
    let consistent = trace.pre.len() == params.layers.len()
        && trace.input.cols == params.input_dim()
        && params
            .layers
            .iter()
            .zip(&trace.pre)
            .all(|(l, z)| z.cols == l.outputs && z.rows == n);
    if !consistent {
        return Err(NnError::Shape("trace was not produced by these parameters".into()));
    }

    let mut grads = ParamGrads::zeros_like(params);
    let last = params.layers.len() - 1;
    // delta holds dLoss/dz for the current layer, batch x outputs.
    let mut delta: Vec<f64> = trace.post[last]
        .data
        .iter()
        .zip(d_loss_d_pred)
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();

    for i in (0..=last).rev() {
        let layer = &params.layers[i];
        let input = if i == 0 { &trace.input } else { &trace.post[i - 1] };
        let g = &mut grads.layers[i];
        for r in 0..n {
            let x = input.row(r);
            let d = &delta[r * layer.outputs..(r + 1) * layer.outputs];
            for (o, &dz) in d.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                g.bias[o] += dz;
                let gw = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &xv) in gw.iter_mut().zip(x) {
                    *w += dz * xv;
                }
            }
        }
        if i == 0 {
            break;
        }
        let below = &trace.pre[i - 1];
        let mut next = vec![0.0; n * layer.inputs];
        for r in 0..n {
            let d = &delta[r * layer.outputs..(r + 1) * layer.outputs];
            let dst = &mut next[r * layer.inputs..(r + 1) * layer.inputs];
            for (o, &dz) in d.iter().enumerate() {
                let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (acc, &wv) in dst.iter_mut().zip(w) {
                    *acc += dz * wv;
                }
            }
            for (acc, &z) in dst.iter_mut().zip(below.row(r)) {
                if z <= 0.0 {
                    *acc = 0.0;
                }
            }
        }
        delta = next;
    }
    Ok(grads)
}
