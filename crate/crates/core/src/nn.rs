//! A small deterministic recurrent network engine.
//!
//! Architecture: `n_in2rec` dense layers (5 -> n, then n -> n) with the hidden
//! activation, `n_lstm` stacked LSTM layers of width n, `n_rec2out` dense
//! layers n -> n with the hidden activation, and a linear n -> 4 output layer
//! followed by softmax. The network emits one probability row per timestep.
//!
//! LSTM gates are stored stacked in the order input, forget, candidate,
//! output; there are no peephole connections.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::{FeatureSequence, FEATURE_COUNT};
use crate::seed::{derive_seed, rng};
use crate::trajectory::RoadUserClass;

pub const INPUT_WIDTH: usize = FEATURE_COUNT;
pub const OUTPUT_WIDTH: usize = RoadUserClass::COUNT;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    /// Identity; used only by the output layer ahead of softmax.
    Linear,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::Network(format!("unknown activation {s:?}; expected tanh or relu"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_in2rec: usize,
    pub n_lstm: usize,
    pub n_rec2out: usize,
    pub width: usize,
    pub activation: Activation,
}

impl HyperParams {
    pub fn new(n_in2rec: usize, n_lstm: usize, n_rec2out: usize, width: usize, activation: Activation) -> Result<Self> {
        let hp = Self {
            n_in2rec,
            n_lstm,
            n_rec2out,
            width,
            activation,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in2rec == 0 || self.n_lstm == 0 || self.n_rec2out == 0 || self.width == 0 {
            return Err(Error::Network(format!("layer counts and width must be >= 1: {self}")));
        }
        if self.activation == Activation::Linear {
            return Err(Error::Network("hidden activation must be tanh or relu".into()));
        }
        Ok(())
    }

    /// Closed-form number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        let n = self.width;
        let dense = |i: usize, o: usize| i * o + o;
        let lstm = 4 * (n * n + n * n + n);
        dense(INPUT_WIDTH, n)
            + (self.n_in2rec - 1) * dense(n, n)
            + self.n_lstm * lstm
            + self.n_rec2out * dense(n, n)
            + dense(n, OUTPUT_WIDTH)
    }
}

impl fmt::Display for HyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, {})",
            self.n_in2rec, self.n_lstm, self.n_rec2out, self.width, self.activation
        )
    }
}

/// Row-major matrix; biases are `rows x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `out += self * x`
    fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (row, o) in self.data.chunks_exact(self.cols).zip(out.iter_mut()) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// `out += self^T * y`
    fn matvec_t_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &g) in self.data.chunks_exact(self.cols).zip(y) {
            if g != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += w * g;
                }
            }
        }
    }

    /// `self += y * x^T`
    fn outer_add(&mut self, y: &[f64], x: &[f64]) {
        for (row, &g) in self.data.chunks_exact_mut(self.cols).zip(y) {
            if g != 0.0 {
                for (w, v) in row.iter_mut().zip(x) {
                    *w += g * v;
                }
            }
        }
    }

    fn add_vec(&mut self, y: &[f64]) {
        for (b, g) in self.data.iter_mut().zip(y) {
            *b += g;
        }
    }
}

/// Glorot/Xavier uniform weights on `[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`,
/// shaped `fan_out x fan_in`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    assert!(fan_in >= 1 && fan_out >= 1);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let mut r = rng(seed);
    Tensor {
        rows: fan_out,
        cols: fan_in,
        data: (0..fan_in * fan_out).map(|_| dist.sample(&mut r)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_width(&self) -> usize {
        self.weight.cols
    }

    pub fn output_width(&self) -> usize {
        self.weight.rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4n x in`
    pub input_weight: Tensor,
    /// `4n x n`
    pub recurrent_weight: Tensor,
    /// `4n x 1`
    pub bias: Tensor,
}

impl LstmLayer {
    pub fn width(&self) -> usize {
        self.recurrent_weight.cols
    }

    pub fn input_width(&self) -> usize {
        self.input_weight.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(DenseLayer),
    Lstm(LstmLayer),
}

impl Layer {
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Lstm(l) => vec![&l.input_weight, &l.recurrent_weight, &l.bias],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Lstm(l) => vec![&mut l.input_weight, &mut l.recurrent_weight, &mut l.bias],
        }
    }

    fn output_width(&self) -> usize {
        match self {
            Layer::Dense(d) => d.output_width(),
            Layer::Lstm(l) => l.width(),
        }
    }

    fn input_width(&self) -> usize {
        match self {
            Layer::Dense(d) => d.input_width(),
            Layer::Lstm(l) => l.input_width(),
        }
    }
}

/// Hidden and cell vectors of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(width: usize) -> Self {
        Self {
            h: vec![0.0; width],
            c: vec![0.0; width],
        }
    }
}

/// Recurrent state of every LSTM layer, zeroed at sequence start.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub layers: Vec<LstmState>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activated gates `[i, f, g, o]` (each of width n) for one step.
fn lstm_gates(layer: &LstmLayer, h_prev: &[f64], input: &[f64]) -> Vec<f64> {
    let n = layer.width();
    let mut z = layer.bias.data.clone();
    layer.input_weight.matvec_add(input, &mut z);
    layer.recurrent_weight.matvec_add(h_prev, &mut z);
    for (k, v) in z.iter_mut().enumerate() {
        *v = if (2 * n..3 * n).contains(&k) { v.tanh() } else { sigmoid(*v) };
    }
    z
}

fn lstm_advance(n: usize, gates: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (i, f, g, o) = (&gates[..n], &gates[n..2 * n], &gates[2 * n..3 * n], &gates[3 * n..]);
    let c: Vec<f64> = (0..n).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let h = (0..n).map(|k| o[k] * c[k].tanh()).collect();
    (c, h)
}

/// One LSTM update: `c' = f*c + i*g`, `h' = o*tanh(c')`. Returns the new
/// state and the output (equal to `h'`).
pub fn lstm_step(layer: &LstmLayer, state: &LstmState, input: &[f64]) -> (LstmState, Vec<f64>) {
    let gates = lstm_gates(layer, &state.h, input);
    let (c, h) = lstm_advance(layer.width(), &gates, &state.c);
    (LstmState { h: h.clone(), c }, h)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Gradients shaped like a network's tensors, in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Tensor>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tensors: net.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_vec(&b.data);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// A realized network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: HyperParams,
    layers: Vec<Layer>,
}

/// Per-layer activations kept for the backward pass.
enum LayerCache {
    Dense {
        inputs: Vec<Vec<f64>>,
        pre: Vec<Vec<f64>>,
        out: Vec<Vec<f64>>,
    },
    Lstm {
        inputs: Vec<Vec<f64>>,
        gates: Vec<Vec<f64>>,
        /// `c[t + 1]` is the cell after step t; `c[0]` is zero.
        c: Vec<Vec<f64>>,
        h: Vec<Vec<f64>>,
    },
}

impl Network {
    /// Assembles a network from explicit layers, checking the chain of shapes.
    pub fn from_layers(spec: HyperParams, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let n = spec.width;
        let mut expected: Vec<(&str, usize, usize)> = Vec::new();
        expected.push(("dense", INPUT_WIDTH, n));
        expected.extend(std::iter::repeat(("dense", n, n)).take(spec.n_in2rec - 1));
        expected.extend(std::iter::repeat(("lstm", n, n)).take(spec.n_lstm));
        expected.extend(std::iter::repeat(("dense", n, n)).take(spec.n_rec2out));
        expected.push(("output", n, OUTPUT_WIDTH));
        if layers.len() != expected.len() {
            return Err(Error::Network(format!(
                "expected {} layers for {spec}, found {}",
                expected.len(),
                layers.len()
            )));
        }
        for (idx, (layer, (kind, i, o))) in layers.iter().zip(&expected).enumerate() {
            let kind_ok = match (layer, *kind) {
                (Layer::Dense(d), "dense") => d.activation == spec.activation,
                (Layer::Dense(d), "output") => d.activation == Activation::Linear,
                (Layer::Lstm(_), "lstm") => true,
                _ => false,
            };
            if !kind_ok {
                return Err(Error::Network(format!("layer {idx}: expected a {kind} layer")));
            }
            let shapes_ok = match layer {
                Layer::Dense(d) => d.weight.shape() == (*o, *i) && d.bias.shape() == (*o, 1),
                Layer::Lstm(l) => {
                    l.input_weight.shape() == (4 * o, *i)
                        && l.recurrent_weight.shape() == (4 * o, *o)
                        && l.bias.shape() == (4 * o, 1)
                }
            };
            let lengths_ok = layer.tensors().iter().all(|t| t.data.len() == t.rows * t.cols);
            if !shapes_ok || !lengths_ok || layer.input_width() != *i || layer.output_width() != *o {
                return Err(Error::Network(format!(
                    "layer {idx}: shape mismatch, expected {kind} {i} -> {o}"
                )));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &HyperParams {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn initial_state(&self) -> RecurrentState {
        RecurrentState {
            layers: self
                .layers
                .iter()
                .filter_map(|l| match l {
                    Layer::Lstm(l) => Some(LstmState::zeros(l.width())),
                    Layer::Dense(_) => None,
                })
                .collect(),
        }
    }

    /// Streaming inference: consumes one feature vector and returns that
    /// timestep's class probabilities.
    pub fn step(&self, state: &mut RecurrentState, input: &[f64; INPUT_WIDTH]) -> [f64; OUTPUT_WIDTH] {
        let mut x = input.to_vec();
        let mut lstm_index = 0;
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(d) => dense_forward(d, &x).1,
                Layer::Lstm(l) => {
                    let (next, h) = lstm_step(l, &state.layers[lstm_index], &x);
                    state.layers[lstm_index] = next;
                    lstm_index += 1;
                    h
                }
            };
        }
        let p = softmax(&x);
        std::array::from_fn(|k| p[k])
    }

    /// Per-timestep probability rows for a sequence.
    pub fn forward(&self, seq: &FeatureSequence) -> Vec<[f64; OUTPUT_WIDTH]> {
        let inputs = sequence_inputs(seq);
        let (probs, _) = self.forward_cached(inputs);
        probs
    }

    fn forward_cached(&self, inputs: Vec<Vec<f64>>) -> (Vec<[f64; OUTPUT_WIDTH]>, Vec<LayerCache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = inputs;
        for layer in &self.layers {
            match layer {
                Layer::Dense(d) => {
                    let (pre, out): (Vec<_>, Vec<_>) = x.iter().map(|v| dense_forward(d, v)).unzip();
                    let next = out.clone();
                    caches.push(LayerCache::Dense { inputs: x, pre, out });
                    x = next;
                }
                Layer::Lstm(l) => {
                    let n = l.width();
                    let mut gates = Vec::with_capacity(x.len());
                    let mut c = vec![vec![0.0; n]];
                    let mut h = vec![vec![0.0; n]];
                    for v in &x {
                        let g = lstm_gates(l, h.last().unwrap(), v);
                        let (c_next, h_next) = lstm_advance(n, &g, c.last().unwrap());
                        gates.push(g);
                        c.push(c_next);
                        h.push(h_next);
                    }
                    let next = h[1..].to_vec();
                    caches.push(LayerCache::Lstm { inputs: x, gates, c, h });
                    x = next;
                }
            }
        }
        let probs = x
            .iter()
            .map(|z| {
                let p = softmax(z);
                std::array::from_fn(|k| p[k])
            })
            .collect();
        (probs, caches)
    }
}

fn dense_forward(d: &DenseLayer, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut pre = d.bias.data.clone();
    d.weight.matvec_add(x, &mut pre);
    let out = pre.iter().map(|&z| d.activation.apply(z)).collect();
    (pre, out)
}

fn sequence_inputs(seq: &FeatureSequence) -> Vec<Vec<f64>> {
    seq.steps.iter().map(|s| s.to_array().to_vec()).collect()
}

/// Builds a Glorot-initialized network with zero biases. Every weight tensor
/// draws from its own stream derived from `(seed, tensor index)`.
pub fn build_network(spec: HyperParams, seed: u64) -> Result<Network> {
    spec.validate()?;
    let n = spec.width;
    let mut tensor_index = 0u64;
    let mut weight = |fan_in: usize, fan_out: usize| {
        let t = glorot_uniform(fan_in, fan_out, derive_seed(seed, tensor_index));
        tensor_index += 1;
        t
    };
    let mut layers = Vec::new();
    let dense = |weight: Tensor, activation| {
        Layer::Dense(DenseLayer {
            bias: Tensor::zeros(weight.rows, 1),
            weight,
            activation,
        })
    };
    layers.push(dense(weight(INPUT_WIDTH, n), spec.activation));
    for _ in 1..spec.n_in2rec {
        layers.push(dense(weight(n, n), spec.activation));
    }
    for _ in 0..spec.n_lstm {
        layers.push(Layer::Lstm(LstmLayer {
            input_weight: weight(n, 4 * n),
            recurrent_weight: weight(n, 4 * n),
            bias: Tensor::zeros(4 * n, 1),
        }));
    }
    for _ in 0..spec.n_rec2out {
        layers.push(dense(weight(n, n), spec.activation));
    }
    layers.push(dense(weight(n, OUTPUT_WIDTH), Activation::Linear));
    Network::from_layers(spec, layers)
}

/// Mean over timesteps of `-ln p_t[target]`, with probabilities clamped to
/// [`PROB_FLOOR`].
pub fn sequence_loss(probs: &[[f64; OUTPUT_WIDTH]], target: RoadUserClass) -> f64 {
    let k = target.index();
    probs.iter().map(|p| -p[k].max(PROB_FLOOR).ln()).sum::<f64>() / probs.len() as f64
}

/// Gradient of the sequence loss with respect to every parameter, by
/// backpropagation through time. Returns the gradients and the loss.
pub fn backward(net: &Network, seq: &FeatureSequence, target: RoadUserClass) -> (GradientSet, f64) {
    backward_weighted(net, seq, target, 1.0)
}

/// As [`backward`], for the loss scaled by `weight`.
pub fn backward_weighted(
    net: &Network,
    seq: &FeatureSequence,
    target: RoadUserClass,
    weight: f64,
) -> (GradientSet, f64) {
    let steps = seq.len();
    assert!(steps > 0, "cannot backpropagate an empty sequence");
    let (probs, caches) = net.forward_cached(sequence_inputs(seq));
    let loss = weight * sequence_loss(&probs, target);

    // softmax + cross-entropy: dL/dz_t = w * (p_t - y) / T
    let scale = weight / steps as f64;
    let mut upstream: Vec<Vec<f64>> = probs
        .iter()
        .map(|p| {
            let mut g: Vec<f64> = p.iter().map(|v| v * scale).collect();
            g[target.index()] -= scale;
            g
        })
        .collect();

    let mut grads = GradientSet::zeros_like(net);
    let mut tensor_cursor = grads.tensors.len();
    for (layer, cache) in net.layers.iter().zip(&caches).rev() {
        match (layer, cache) {
            (Layer::Dense(d), LayerCache::Dense { inputs, pre, out }) => {
                tensor_cursor -= 2;
                let (gw, gb) = grads.tensors[tensor_cursor..].split_at_mut(1);
                let (gw, gb) = (&mut gw[0], &mut gb[0]);
                let mut downstream = Vec::with_capacity(steps);
                for t in 0..steps {
                    let dz: Vec<f64> = upstream[t]
                        .iter()
                        .zip(pre[t].iter().zip(&out[t]))
                        .map(|(g, (&x, &y))| g * d.activation.derivative(x, y))
                        .collect();
                    gw.outer_add(&dz, &inputs[t]);
                    gb.add_vec(&dz);
                    let mut dx = vec![0.0; d.input_width()];
                    d.weight.matvec_t_add(&dz, &mut dx);
                    downstream.push(dx);
                }
                upstream = downstream;
            }
            (Layer::Lstm(l), LayerCache::Lstm { inputs, gates, c, h }) => {
                tensor_cursor -= 3;
                let n = l.width();
                let mut downstream = vec![Vec::new(); steps];
                let mut dh_next = vec![0.0; n];
                let mut dc_next = vec![0.0; n];
                let mut dz = vec![0.0; 4 * n];
                for t in (0..steps).rev() {
                    let g = &gates[t];
                    let (i, f, cand, o) = (&g[..n], &g[n..2 * n], &g[2 * n..3 * n], &g[3 * n..]);
                    let (c_prev, c_t) = (&c[t], &c[t + 1]);
                    for k in 0..n {
                        let dh = upstream[t][k] + dh_next[k];
                        let tc = c_t[k].tanh();
                        let dc = dc_next[k] + dh * o[k] * (1.0 - tc * tc);
                        dz[k] = dc * cand[k] * i[k] * (1.0 - i[k]);
                        dz[n + k] = dc * c_prev[k] * f[k] * (1.0 - f[k]);
                        dz[2 * n + k] = dc * i[k] * (1.0 - cand[k] * cand[k]);
                        dz[3 * n + k] = dh * tc * o[k] * (1.0 - o[k]);
                        dc_next[k] = dc * f[k];
                    }
                    let gt = &mut grads.tensors[tensor_cursor..tensor_cursor + 3];
                    gt[0].outer_add(&dz, &inputs[t]);
                    gt[1].outer_add(&dz, &h[t]);
                    gt[2].add_vec(&dz);
                    let mut dx = vec![0.0; l.input_width()];
                    l.input_weight.matvec_t_add(&dz, &mut dx);
                    downstream[t] = dx;
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    l.recurrent_weight.matvec_t_add(&dz, &mut dh_next);
                }
                upstream = downstream;
            }
            _ => unreachable!("cache kind follows layer kind"),
        }
    }
    (grads, loss)
}
