//! Small dense-network engine: batched forward and reverse-mode gradients for
//! ReLU multilayer perceptrons, Adam, softmax/KL helpers and a versioned JSON
//! checkpoint envelope.
//!
//! Weights are stored input-major (`in x out`) so a batch forward pass is one
//! matrix product per layer. Checkpoints store them output-major (row `j`
//! holds the weights feeding output `j`).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::battery_env::NormStats;
use crate::error::{Error, Result};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer { weights: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    fn slices(&self) -> [&[f64]; 2] {
        [self.weights.as_slice().unwrap(), self.bias.as_slice().unwrap()]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weights.as_slice_mut().unwrap(), self.bias.as_slice_mut().unwrap()]
    }
}

/// Parameters (or gradients, or optimizer moments) of a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<DenseLayer>,
}

impl ParamSet {
    pub fn zeros(dims: &[usize]) -> Self {
        ParamSet { layers: dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect() }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| l.slices())
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.slices_mut())
    }

    /// Flattened copy in layer order (weights then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn get_flat(&self, mut index: usize) -> f64 {
        for s in self.slices() {
            if index < s.len() {
                return s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for s in self.slices_mut() {
            if index < s.len() {
                s[index] = value;
                return;
            }
            index -= s.len();
        }
        panic!("parameter index out of range")
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.slices_mut().for_each(|s| s.iter_mut().for_each(|x| *x *= k));
    }

    pub fn all_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn congruent(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim())
    }
}

/// Fully connected network: ReLU on hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardNet {
    params: ParamSet,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input followed by each layer's post-activation output.
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

impl FeedForwardNet {
    /// Uniform Glorot initialisation, zero biases.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut params = ParamSet::zeros(dims);
        for layer in &mut params.layers {
            let (fan_in, fan_out) = layer.weights.dim();
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer.weights.iter_mut().for_each(|w| *w = rng.random_range(-bound..bound));
        }
        Ok(FeedForwardNet { params })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(FeedForwardNet { params: ParamSet::zeros(dims) })
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        if params.layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for w in params.layers.windows(2) {
            if w[0].weights.ncols() != w[1].weights.nrows() {
                return Err(Error::Dimension {
                    expected: w[0].weights.ncols(),
                    found: w[1].weights.nrows(),
                });
            }
        }
        if params.layers.iter().any(|l| l.bias.len() != l.weights.ncols()) {
            return Err(Error::invalid("bias length does not match layer width"));
        }
        Ok(FeedForwardNet { params })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid(format!("bad layer dims {dims:?}")));
        }
        Ok(())
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.params.layers[0].weights.nrows()];
        dims.extend(self.params.layers.iter().map(|l| l.weights.ncols()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.params.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.params.layers.last().unwrap().weights.ncols()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::Dimension { expected: self.input_dim(), found: x.len() })?;
        Ok(self.forward_batch(batch)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass over a `batch x input` matrix.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.params.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.params.layers.iter().enumerate() {
            h = affine(&h.view(), layer);
            if i < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let last = self.params.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.params.layers.len() + 1);
        activations.push(x.to_owned());
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut h = affine(&activations[i].view(), layer);
            if i < last {
                h.mapv_inplace(relu);
            }
            activations.push(h);
        }
        Ok(ForwardCache { activations })
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), found: x.ncols() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite network input"));
        }
        Ok(())
    }

    /// Gradients of `sum(output * upstream)` with respect to every parameter,
    /// summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<ParamSet> {
        Ok(self.backward_with_input(cache, upstream)?.0)
    }

    /// As [`backward`](Self::backward), also returning the gradient with respect to the input.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(ParamSet, Array2<f64>)> {
        let out = cache.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Dimension { expected: out.ncols(), found: upstream.ncols() });
        }
        let n = self.params.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for i in (0..n).rev() {
            let layer = &self.params.layers[i];
            let input = &cache.activations[i];
            let weights = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            let mut next = delta.dot(&layer.weights.t());
            if i > 0 {
                // ReLU derivative taken as 0 at the kink
                ndarray::Zip::from(&mut next).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            grads.push(DenseLayer { weights, bias });
            delta = next;
        }
        grads.reverse();
        Ok((ParamSet { layers: grads }, delta))
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn affine(x: &ArrayView2<f64>, layer: &DenseLayer) -> Array2<f64> {
    let mut h = x.dot(&layer.weights);
    h += &layer.bias;
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: ParamSet,
    second: ParamSet,
}

impl AdamState {
    pub fn new(net: &FeedForwardNet, learning_rate: f64) -> Self {
        let dims = net.layer_dims();
        AdamState {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: ParamSet::zeros(&dims),
            second: ParamSet::zeros(&dims),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    if !params.congruent(grads) || !params.congruent(&state.first) {
        return Err(Error::invalid("Adam: parameter, gradient and moment shapes differ"));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.learning_rate, state.epsilon);
    let moments = state.first.slices_mut().zip(state.second.slices_mut());
    for ((p, g), (m, v)) in params.slices_mut().zip(grads.slices()).zip(moments) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Softmax of `logits / temperature`, shifted by the maximum for stability.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    debug_assert!(temperature > 0.0);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// `sum p ln(p/q)` with both arguments floored at [`PROB_FLOOR`]; `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| {
            let pf = pi.max(PROB_FLOOR);
            pi * (pf.ln() - qi.max(PROB_FLOOR).ln())
        })
        .sum()
}

/// Partial derivatives of [`kl_divergence`] with respect to `p` and `q`.
pub fn kl_gradients(p: &[f64], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dp = Vec::with_capacity(p.len());
    let mut dq = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        let qf = qi.max(PROB_FLOOR);
        if pi > 0.0 {
            let pf = pi.max(PROB_FLOOR);
            let dlnp = if pi >= PROB_FLOOR { 1.0 } else { 0.0 };
            dp.push(pf.ln() - qf.ln() + dlnp);
        } else {
            dp.push(0.0);
        }
        dq.push(if qi >= PROB_FLOOR { -pi / qf } else { 0.0 });
    }
    (dp, dq)
}

/// Vector-Jacobian product of softmax (temperature `t`): gradient with
/// respect to the logits given the gradient with respect to the probabilities.
pub fn softmax_backward(probs: &[f64], upstream: &[f64], temperature: f64) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    probs.iter().zip(upstream).map(|(p, g)| p * (g - dot) / temperature).collect()
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// Output-major: `weights[j * inputs + i]` connects input `i` to output `j`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serialized network plus normalisation statistics and model metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub layers: Vec<LayerRecord>,
    pub norm_stats: NormStats,
    pub meta: M,
}

impl<M> Checkpoint<M> {
    pub fn new(net: &FeedForwardNet, norm_stats: NormStats, meta: M) -> Self {
        let layers = net
            .params
            .layers
            .iter()
            .map(|l| LayerRecord {
                weights: l.weights.t().iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            layer_dims: net.layer_dims(),
            layers,
            norm_stats,
            meta,
        }
    }

    pub fn network(&self) -> Result<FeedForwardNet> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(self.format_version));
        }
        let dims = &self.layer_dims;
        if dims.len() < 2 || self.layers.len() != dims.len() - 1 {
            return Err(Error::Checkpoint(format!(
                "{} layers stored for dims {dims:?}",
                self.layers.len()
            )));
        }
        let mut params = ParamSet::zeros(dims);
        for (k, (rec, layer)) in self.layers.iter().zip(&mut params.layers).enumerate() {
            let (inputs, outputs) = (dims[k], dims[k + 1]);
            if rec.weights.len() != inputs * outputs || rec.bias.len() != outputs {
                return Err(Error::Checkpoint(format!(
                    "layer {k}: expected {} weights and {outputs} biases, found {} and {}",
                    inputs * outputs,
                    rec.weights.len(),
                    rec.bias.len()
                )));
            }
            for j in 0..outputs {
                for i in 0..inputs {
                    layer.weights[[i, j]] = rec.weights[j * inputs + i];
                }
            }
            layer.bias.assign(&Array1::from(rec.bias.clone()));
        }
        if !params.all_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        FeedForwardNet::from_params(params)
    }
}

pub fn save_checkpoint<M: Serialize>(
    net: &FeedForwardNet,
    norm_stats: NormStats,
    meta: M,
) -> Result<Vec<u8>> {
    if !net.params.all_finite() {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    let ckpt = Checkpoint::new(net, norm_stats, meta);
    let mut bytes = serde_json::to_vec_pretty(&ckpt)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn load_checkpoint<M: DeserializeOwned>(bytes: &[u8]) -> Result<(FeedForwardNet, Checkpoint<M>)> {
    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let version: Version = serde_json::from_slice(bytes)
        .map_err(|e| Error::Checkpoint(format!("malformed envelope: {e}")))?;
    if version.format_version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version.format_version));
    }
    let ckpt: Checkpoint<M> = serde_json::from_slice(bytes)
        .map_err(|e| Error::Checkpoint(format!("malformed envelope: {e}")))?;
    let net = ckpt.network()?;
    Ok((net, ckpt))
}
