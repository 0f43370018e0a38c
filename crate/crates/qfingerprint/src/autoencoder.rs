//! From-scratch dense auto-encoder: forward pass, backpropagation, Adam,
//! and mean-square-error training.
//!
//! The encoder tapers to a bottleneck and back out to the input width; all
//! hidden layers use Tanh except a single ReLU layer at the bottleneck, and
//! the output layer is linear. Training is plain mini-batch Adam, seeded and
//! bit-deterministic.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureVector;
use crate::persist::{push_f64_slice, push_u64, read_container, write_container, Reader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative w.r.t. the pre-activation, given both the pre-activation
    /// and the activation value. The ReLU subgradient at 0 is 0.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Linear => 2,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => f.write_str("tanh"),
            Activation::Relu => f.write_str("relu"),
            Activation::Linear => f.write_str("linear"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        LayerSpec { width, activation }
    }
}

/// Training hyperparameters. Defaults: 300 epochs, Adam at learning rate
/// 0.001 with the usual moment decays, mini-batches of 16.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 16,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One Adam update with bias correction, applied in place.
/// `step` is the 1-based global step count after this update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    cfg: &TrainConfig,
) {
    debug_assert_eq!(params.len(), grads.len());
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// First/second moment buffers shaped like the parameters, plus step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

const MODEL_MAGIC: &[u8; 8] = b"QFPMODEL";
const MODEL_VERSION: u32 = 1;

/// Dense auto-encoder. Weight matrices are stored row-major per layer
/// (`weights[l][i * fan_in + j]` connects input `j` to output unit `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    adam: AdamState,
    seed: u64,
}

/// Hidden widths as fractions of the input width: a symmetric taper down to
/// a d/8 bottleneck and back, floored at 4. The bottleneck layer is the one
/// ReLU layer; the final layer is linear at width `d`.
pub fn default_architecture(d: usize) -> Result<Vec<LayerSpec>> {
    if d < 8 {
        return Err(Error::Architecture(format!(
            "input dimension {d} is too small (need >= 8)"
        )));
    }
    let ratios: [(usize, usize); 7] = [(3, 4), (1, 2), (1, 4), (1, 8), (1, 4), (1, 2), (3, 4)];
    let bottleneck = 3;
    let mut layers = Vec::with_capacity(8);
    for (i, (num, den)) in ratios.iter().enumerate() {
        let width = ((d * num + den - 1) / den).max(4);
        let activation = if i == bottleneck {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        layers.push(LayerSpec::new(width, activation));
    }
    layers.push(LayerSpec::new(d, Activation::Linear));
    Ok(layers)
}

impl AutoencoderModel {
    /// Build a model with Glorot-uniform weights and zero biases, seeded.
    ///
    /// The layer list must end in a linear layer of width `input_dim` and
    /// contain exactly one ReLU hidden layer; all other hidden layers are
    /// Tanh.
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Architecture("input dimension must be >= 1".into()));
        }
        if layers.len() < 2 {
            return Err(Error::Architecture(
                "need at least one hidden layer and an output layer".into(),
            ));
        }
        let last = layers.last().unwrap();
        if last.activation != Activation::Linear || last.width != input_dim {
            return Err(Error::Architecture(format!(
                "output layer must be linear with width {input_dim}"
            )));
        }
        let hidden = &layers[..layers.len() - 1];
        let relu_count = hidden
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .count();
        if relu_count != 1 {
            return Err(Error::Architecture(format!(
                "expected exactly one ReLU hidden layer, found {relu_count}"
            )));
        }
        if hidden.iter().any(|l| l.activation == Activation::Linear) {
            return Err(Error::Architecture(
                "hidden layers must be tanh or relu".into(),
            ));
        }
        if layers.iter().any(|l| l.width == 0) {
            return Err(Error::Architecture("layer width must be >= 1".into()));
        }

        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        let mut fan_in = input_dim;
        for layer in &layers {
            let fan_out = layer.width;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_out * fan_in)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
            fan_in = fan_out;
        }
        let adam = AdamState {
            step: 0,
            m_w: weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        Ok(AutoencoderModel {
            input_dim,
            layers,
            weights,
            biases,
            adam,
            seed,
        })
    }

    /// Model with the default tapered architecture for dimension `d`.
    pub fn with_default_architecture(d: usize, seed: u64) -> Result<Self> {
        Self::new(d, default_architecture(d)?, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn adam_step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.layers[layer - 1].width
        }
    }

    /// Reconstruction of `x` through the full encoder/decoder stack.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let (_, mut acts) = self.forward_trace(x);
        Ok(acts.pop().unwrap())
    }

    /// Pre-activations and activations per layer (activations exclude the
    /// input).
    fn forward_trace(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut input = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let fan_in = self.fan_in(l);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut z = vec![0.0; layer.width];
            for i in 0..layer.width {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                let mut acc = b[i];
                for (wj, xj) in row.iter().zip(input.iter()) {
                    acc += wj * xj;
                }
                z[i] = acc;
            }
            let a: Vec<f64> = z.iter().map(|&zi| layer.activation.apply(zi)).collect();
            zs.push(z);
            acts.push(a);
            input = acts.last().unwrap();
        }
        (zs, acts)
    }

    /// Mean squared error of the reconstruction against the input itself,
    /// averaged over the output components.
    pub fn reconstruction_loss(&self, x: &[f64]) -> Result<f64> {
        let y = self.forward(x)?;
        Ok(mse(&y, x))
    }

    /// Batch gradients of the mean (over batch and components) squared error
    /// of reconstructing each sample. Returns (weight grads, bias grads)
    /// shaped like the parameters.
    fn batch_gradients(&self, batch: &[&[f64]]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.layers.len();
        let mut grad_w: Vec<Vec<f64>> =
            self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut grad_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let scale = 2.0 / (batch.len() * self.input_dim) as f64;

        for &x in batch {
            let (zs, acts) = self.forward_trace(x);
            // dL/da for the output layer.
            let mut upstream: Vec<f64> = acts[n_layers - 1]
                .iter()
                .zip(x.iter())
                .map(|(y, t)| scale * (y - t))
                .collect();
            for l in (0..n_layers).rev() {
                let layer = &self.layers[l];
                let fan_in = self.fan_in(l);
                let delta: Vec<f64> = (0..layer.width)
                    .map(|i| upstream[i] * layer.activation.derivative(zs[l][i], acts[l][i]))
                    .collect();
                let below: &[f64] = if l == 0 { x } else { &acts[l - 1] };
                for i in 0..layer.width {
                    let row = &mut grad_w[l][i * fan_in..(i + 1) * fan_in];
                    let d = delta[i];
                    for (g, aj) in row.iter_mut().zip(below.iter()) {
                        *g += d * aj;
                    }
                    grad_b[l][i] += d;
                }
                if l > 0 {
                    let w = &self.weights[l];
                    let mut next = vec![0.0; fan_in];
                    for i in 0..layer.width {
                        let row = &w[i * fan_in..(i + 1) * fan_in];
                        let d = delta[i];
                        for (nj, wj) in next.iter_mut().zip(row.iter()) {
                            *nj += d * wj;
                        }
                    }
                    upstream = next;
                }
            }
        }
        (grad_w, grad_b)
    }

    fn apply_adam(&mut self, grad_w: &[Vec<f64>], grad_b: &[Vec<f64>], cfg: &TrainConfig) {
        self.adam.step += 1;
        let step = self.adam.step;
        for l in 0..self.layers.len() {
            adam_step(
                &mut self.weights[l],
                &grad_w[l],
                &mut self.adam.m_w[l],
                &mut self.adam.v_w[l],
                step,
                cfg,
            );
            adam_step(
                &mut self.biases[l],
                &grad_b[l],
                &mut self.adam.m_b[l],
                &mut self.adam.v_b[l],
                step,
                cfg,
            );
        }
    }

    /// Mini-batch Adam training toward reconstructing every row. Returns the
    /// per-epoch loss trace (mean squared error before each epoch's updates
    /// are complete, averaged over all samples).
    pub fn train(&mut self, data: &[FeatureVector], cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyCorpus {
                context: "training data".into(),
            });
        }
        for row in data {
            if row.dim() != self.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.input_dim,
                    got: row.dim(),
                });
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.shuffle_seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut loss_acc = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&[f64]> =
                    chunk.iter().map(|&i| data[i].weights.as_slice()).collect();
                let mut batch_loss = 0.0;
                for &x in &batch {
                    let (_, acts) = self.forward_trace(x);
                    batch_loss += mse(acts.last().unwrap(), x);
                }
                batch_loss /= batch.len() as f64;
                let (grad_w, grad_b) = self.batch_gradients(&batch);
                self.apply_adam(&grad_w, &grad_b, cfg);
                loss_acc += batch_loss * batch.len() as f64;
            }
            let epoch_loss = loss_acc / data.len() as f64;
            if !epoch_loss.is_finite() {
                return Err(Error::TrainingDivergence { epoch });
            }
            trace.push(epoch_loss);
        }
        Ok(trace)
    }

    fn flat_gradients(&self, x: &[f64]) -> Vec<f64> {
        let (grad_w, grad_b) = self.batch_gradients(&[x]);
        let mut flat = Vec::with_capacity(self.parameter_count());
        for l in 0..self.layers.len() {
            flat.extend_from_slice(&grad_w[l]);
            flat.extend_from_slice(&grad_b[l]);
        }
        flat
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in 0..self.layers.len() {
            if idx < self.weights[l].len() {
                return &mut self.weights[l][idx];
            }
            idx -= self.weights[l].len();
            if idx < self.biases[l].len() {
                return &mut self.biases[l][idx];
            }
            idx -= self.biases[l].len();
        }
        panic!("parameter index out of range");
    }

    /// Binary serialization (weights, biases, Adam state) plus a JSON
    /// sidecar of hyperparameters at `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut payload = Vec::new();
        push_u64(&mut payload, self.input_dim as u64);
        push_u64(&mut payload, self.layers.len() as u64);
        for layer in &self.layers {
            push_u64(&mut payload, layer.width as u64);
            payload.push(layer.activation.tag());
        }
        push_u64(&mut payload, self.seed);
        push_u64(&mut payload, self.adam.step);
        for l in 0..self.layers.len() {
            push_f64_slice(&mut payload, &self.weights[l]);
            push_f64_slice(&mut payload, &self.biases[l]);
            push_f64_slice(&mut payload, &self.adam.m_w[l]);
            push_f64_slice(&mut payload, &self.adam.v_w[l]);
            push_f64_slice(&mut payload, &self.adam.m_b[l]);
            push_f64_slice(&mut payload, &self.adam.v_b[l]);
        }
        write_container(path, MODEL_MAGIC, MODEL_VERSION, &payload)?;

        let sidecar = serde_json::json!({
            "input_dim": self.input_dim,
            "layers": self.layers,
            "seed": self.seed,
            "adam_steps": self.adam.step,
            "parameters": self.parameter_count(),
        });
        let sidecar_path = sidecar_path(path);
        std::fs::write(
            &sidecar_path,
            serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&sidecar_path, e))?,
        )
        .map_err(|e| Error::io(&sidecar_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let payload = read_container(path, MODEL_MAGIC, MODEL_VERSION)?;
        let mut r = Reader::new(&payload, path);
        let input_dim = r.u64()? as usize;
        let n_layers = r.u64()? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let width = r.u64()? as usize;
            let tag = r.u8()?;
            let activation = Activation::from_tag(tag).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("unknown activation tag {tag}"),
            })?;
            layers.push(LayerSpec { width, activation });
        }
        let seed = r.u64()?;
        let step = r.u64()?;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let (mut m_w, mut v_w, mut m_b, mut v_b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut fan_in = input_dim;
        for layer in &layers {
            let n_w = layer.width * fan_in;
            weights.push(r.f64_vec(n_w)?);
            biases.push(r.f64_vec(layer.width)?);
            m_w.push(r.f64_vec(n_w)?);
            v_w.push(r.f64_vec(n_w)?);
            m_b.push(r.f64_vec(layer.width)?);
            v_b.push(r.f64_vec(layer.width)?);
            fan_in = layer.width;
        }
        r.finish()?;
        Ok(AutoencoderModel {
            input_dim,
            layers,
            weights,
            biases,
            adam: AdamState {
                step,
                m_w,
                v_w,
                m_b,
                v_b,
            },
            seed,
        })
    }

    #[cfg(test)]
    pub(crate) fn set_weights_for_test(&mut self, layer: usize, w: Vec<f64>, b: Vec<f64>) {
        assert_eq!(self.weights[layer].len(), w.len());
        assert_eq!(self.biases[layer].len(), b.len());
        self.weights[layer] = w;
        self.biases[layer] = b;
    }

    #[cfg(test)]
    pub(crate) fn weight_bound(&self, layer: usize) -> f64 {
        let fan_in = self.fan_in(layer);
        let fan_out = self.layers[layer].width;
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    #[cfg(test)]
    pub(crate) fn weights_of(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    PathBuf::from(os)
}

fn mse(y: &[f64], target: &[f64]) -> f64 {
    let acc: f64 = y
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    acc / y.len() as f64
}

/// Max over parameters of `|g_analytic - g_fd| / max(1, |g_analytic| + |g_fd|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Compare backprop gradients of the reconstruction loss at `x` against
/// central finite differences; returns the max relative error.
pub fn gradient_check(model: &AutoencoderModel, x: &[f64], epsilon: f64) -> Result<f64> {
    if x.len() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: x.len(),
        });
    }
    let analytic = model.flat_gradients(x);
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = model.clone();
    for idx in 0..analytic.len() {
        let original = *probe.param_mut(idx);
        *probe.param_mut(idx) = original + epsilon;
        let plus = probe.reconstruction_loss(x)?;
        *probe.param_mut(idx) = original - epsilon;
        let minus = probe.reconstruction_loss(x)?;
        *probe.param_mut(idx) = original;
        numeric.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(max_relative_error(&analytic, &numeric))
}
