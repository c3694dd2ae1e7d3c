//! Dense feed-forward networks with hand-written backpropagation.
//!
//! Everything here runs in `f64` and is deterministic for a given seed:
//! initialization, batch shuffling and the optimizers draw only from
//! explicitly seeded ChaCha streams.

mod loss;
mod optim;
mod train;

pub(crate) use loss::sample_loss;
pub use loss::{
    class_balanced_weights, weighted_bce_loss, ClassWeightConfig, ClassWeights, PROB_CLIP,
};
pub use optim::{optimizer_step, AdamParams, OptimizerKind, OptimizerState, ScalarOptimizer};
pub use train::{
    backward, loss_and_grad, shuffled_batches, train, SampleGrad, TrainConfig, Trainer,
};
pub(crate) use train::{bce_output_delta, check_binary_head};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Keep only the listed columns, in the listed order.
    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(cols.iter().map(|&c| r[c]));
        }
        Matrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    /// Stack two matrices vertically.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot stack {} columns on {}",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    /// Wire tag used by the parameter codec.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One dense layer: `activation(W x + b)`, with `W` stored row-major as
/// `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
            activation,
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.n_in + inp]
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.n_out {
            let w = &self.weights[o * self.n_in..(o + 1) * self.n_in];
            let z = w
                .iter()
                .zip(x)
                .fold(self.bias[o], |acc, (wi, xi)| acc + wi * xi);
            out.push(self.activation.apply(z));
        }
    }
}

/// Parameters of a dense network. Also used as the container for
/// gradients and optimizer moments, which share its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<Layer>,
}

impl ModelParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let p = Self { layers };
        p.validate()?;
        Ok(p)
    }

    /// Checks dimension chaining, buffer sizes and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.n_in == 0 || l.n_out == 0 {
                return Err(Error::Shape(format!("layer {k} has a zero dimension")));
            }
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Shape(format!(
                    "layer {k} buffers do not match {}x{}",
                    l.n_out, l.n_in
                )));
            }
            if k > 0 && self.layers[k - 1].n_out != l.n_in {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but layer {} emits {}",
                    l.n_in,
                    k - 1,
                    self.layers[k - 1].n_out
                )));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::Shape(format!("layer {k} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    /// Width of the last hidden layer, or `None` for a single-layer net.
    pub fn last_hidden_dim(&self) -> Option<usize> {
        let n = self.layers.len();
        (n >= 2).then(|| self.layers[n - 2].n_out)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.n_in, l.n_out, l.activation))
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.n_in == b.n_in && a.n_out == b.n_out && a.activation == b.activation
            })
    }

    /// Parameter buffers in canonical order: per layer, weights then bias.
    pub fn buffers(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.buffers().flat_map(|b| b.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.buffers_mut().flat_map(|b| b.iter_mut())
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += factor * b;
        }
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(
    layer_dims: &[usize],
    activations: &[Activation],
    seed: u64,
) -> Result<ModelParams> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least input and output dimensions, got {layer_dims:?}"
        )));
    }
    if activations.len() != layer_dims.len() - 1 {
        return Err(Error::Config(format!(
            "{} layers need {} activations, got {}",
            layer_dims.len() - 1,
            layer_dims.len() - 1,
            activations.len()
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::Config(format!("zero-width layer in {layer_dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = layer_dims
        .windows(2)
        .zip(activations)
        .map(|(w, &act)| {
            let (n_in, n_out) = (w[0], w[1]);
            let bound = init_bound(n_in, n_out);
            let weights = (0..n_in * n_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Layer {
                n_in,
                n_out,
                weights,
                bias: vec![0.0; n_out],
                activation: act,
            }
        })
        .collect();
    ModelParams::new(layers)
}

pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Result of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub output: Vec<f64>,
    /// Post-activation outputs of every layer except the last.
    pub hidden: Vec<Vec<f64>>,
}

impl Forward {
    pub fn last_hidden(&self) -> Option<&[f64]> {
        self.hidden.last().map(Vec::as_slice)
    }
}

pub fn forward(params: &ModelParams, x: &[f64]) -> Result<Forward> {
    let mut acts = forward_trace(params, x)?;
    let output = acts.pop().unwrap_or_default();
    acts.remove(0);
    Ok(Forward {
        output,
        hidden: acts,
    })
}

/// All layer activations, with the input at index 0.
pub(crate) fn forward_trace(params: &ModelParams, x: &[f64]) -> Result<Vec<Vec<f64>>> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} values, network expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(x.to_vec());
    for layer in &params.layers {
        let mut out = Vec::with_capacity(layer.n_out);
        layer.apply(acts.last().unwrap(), &mut out);
        acts.push(out);
    }
    Ok(acts)
}

/// First output unit for every row; the probability for a binary head.
pub fn predict_proba(params: &ModelParams, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != params.input_dim() {
        return Err(Error::Shape(format!(
            "matrix has {} columns, network expects {}",
            x.cols(),
            params.input_dim()
        )));
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    Ok(x.iter_rows()
        .map(|row| {
            a.clear();
            a.extend_from_slice(row);
            for layer in &params.layers {
                layer.apply(&a, &mut b);
                std::mem::swap(&mut a, &mut b);
            }
            a[0]
        })
        .collect())
}
