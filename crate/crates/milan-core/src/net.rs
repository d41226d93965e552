//! The hashing network: a stack of dense layers with LeakyReLU hidden
//! activations and a sigmoid output layer, plus exact backpropagation,
//! Glorot-uniform initialization, Adam updates, and checkpoint I/O.
//!
//! Parameters are stored as f32 (matching the checkpoint format, so
//! save/load roundtrips are bit-exact) while all arithmetic runs in f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default LeakyReLU slope on negative pre-activations.
pub const DEFAULT_NEG_SLOPE: f32 = 0.2;

/// Pre-sigmoid values are clamped to this magnitude before exponentiation.
/// Inside the clamp the sigmoid is exact to double precision.
const SIGMOID_CLAMP: f64 = 30.0;

const CHECKPOINT_MAGIC: &[u8; 5] = b"MILN1";

/// One fully-connected layer; `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl DenseLayer {
    fn row(&self, o: usize) -> &[f32] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

/// All parameters of the network, along with the LeakyReLU slope used by the
/// hidden layers (it travels with checkpoints).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<DenseLayer>,
    pub neg_slope: f32,
}

impl NetworkParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    /// Output width K = hash-code length.
    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Layer sizes, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn with_neg_slope(mut self, neg_slope: f32) -> Self {
        self.neg_slope = neg_slope;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Validation("network has no layers".into()));
        }
        let mut prev_out = self.layers[0].in_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Validation(format!("layer {i} has a zero dimension")));
            }
            if l.in_dim != prev_out {
                return Err(Error::Validation(format!(
                    "layer {i} expects {} inputs but the previous layer emits {prev_out}",
                    l.in_dim
                )));
            }
            if l.weights.len() != l.out_dim * l.in_dim || l.bias.len() != l.out_dim {
                return Err(Error::Validation(format!(
                    "layer {i} buffer sizes are wrong"
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "layer {i} holds non-finite values"
                )));
            }
            prev_out = l.out_dim;
        }
        Ok(())
    }
}

/// Glorot-uniform initialization: weights drawn from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))`, biases zero.
/// Deterministic in `seed`.
pub fn init_params(dims: &[usize], seed: u64) -> Result<NetworkParams> {
    if dims.len() < 2 {
        return Err(Error::Config(
            "need at least an input and an output size".into(),
        ));
    }
    if dims.contains(&0) {
        return Err(Error::Config("layer sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound) as f32)
            .collect();
        layers.push(DenseLayer {
            out_dim: fan_out,
            in_dim: fan_in,
            weights,
            bias: vec![0.0; fan_out],
        });
    }
    Ok(NetworkParams {
        layers,
        neg_slope: DEFAULT_NEG_SLOPE,
    })
}

/// Everything recorded during one forward pass, as needed for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer; `layer_inputs[0]` is the raw feature vector.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Pre-activations `z = W x + b` per layer.
    pub pre_activations: Vec<Vec<f64>>,
    /// Final sigmoid output, every component in [0, 1].
    pub output: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + (-z).exp())
}

fn sigmoid_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_relu_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Converts a raw feature row into the f64 network input, optionally scaled
/// to unit L2 norm.
pub fn feature_input(feature: &[f32], unit_norm: bool) -> Vec<f64> {
    let mut x: Vec<f64> = feature.iter().map(|&v| f64::from(v)).collect();
    if unit_norm {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut x {
                *v /= norm;
            }
        }
    }
    x
}

/// Runs the network on one input and records the full trace.
pub fn forward(params: &NetworkParams, input: &[f64]) -> Result<ForwardTrace> {
    if input.len() != params.input_dim() {
        return Err(Error::Validation(format!(
            "input has {} components, network expects {}",
            input.len(),
            params.input_dim()
        )));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite network input".into()));
    }
    let n_layers = params.layers.len();
    let slope = f64::from(params.neg_slope);
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut x = input.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = vec![0.0f64; layer.out_dim];
        for (o, zo) in z.iter_mut().enumerate() {
            let mut acc = f64::from(layer.bias[o]);
            for (w, xi) in layer.row(o).iter().zip(&x) {
                acc += f64::from(*w) * xi;
            }
            *zo = acc;
        }
        let last = l == n_layers - 1;
        let activated = if last {
            z.iter().map(|&v| sigmoid(v)).collect()
        } else {
            z.iter().map(|&v| leaky_relu(v, slope)).collect()
        };
        layer_inputs.push(std::mem::replace(&mut x, activated));
        pre_activations.push(z);
    }
    Ok(ForwardTrace {
        layer_inputs,
        pre_activations,
        output: x,
    })
}

/// Shortcut: forward pass returning only the output embedding.
pub fn embed(params: &NetworkParams, feature: &[f32], unit_norm: bool) -> Result<Vec<f64>> {
    Ok(forward(params, &feature_input(feature, unit_norm))?.output)
}

/// Gradient buffers for one layer, in f64.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a scalar loss with respect to every parameter.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrads>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn matches(&self, params: &NetworkParams) -> bool {
        self.layers.len() == params.layers.len()
            && self
                .layers
                .iter()
                .zip(&params.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weights.iter().chain(&g.bias).all(|v| v.is_finite()))
    }
}

/// Exact chain rule through sigmoid and LeakyReLU for a batch of traces.
///
/// Returns parameter gradients summed over the batch and the gradient with
/// respect to each input.
pub fn backward(
    params: &NetworkParams,
    traces: &[ForwardTrace],
    output_grads: &[Vec<f64>],
) -> Result<(ParamGrads, Vec<Vec<f64>>)> {
    if traces.len() != output_grads.len() {
        return Err(Error::Validation(format!(
            "{} traces but {} output gradients",
            traces.len(),
            output_grads.len()
        )));
    }
    let n_layers = params.layers.len();
    let slope = f64::from(params.neg_slope);
    let mut grads = ParamGrads::zeros_like(params);
    let mut input_grads = Vec::with_capacity(traces.len());
    for (trace, gout) in traces.iter().zip(output_grads) {
        if trace.layer_inputs.len() != n_layers
            || trace.pre_activations.len() != n_layers
            || gout.len() != params.output_dim()
        {
            return Err(Error::Validation(
                "trace shape does not match the network".into(),
            ));
        }
        // Output layer: gradient through the sigmoid.
        let mut delta: Vec<f64> = trace.pre_activations[n_layers - 1]
            .iter()
            .zip(gout)
            .map(|(&z, g)| g * sigmoid_grad(z))
            .collect();
        for l in (0..n_layers).rev() {
            let layer = &params.layers[l];
            let x = &trace.layer_inputs[l];
            let lg = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                lg.bias[o] += d;
                let wrow = &mut lg.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (wg, xi) in wrow.iter_mut().zip(x) {
                    *wg += d * xi;
                }
            }
            let mut xgrad = vec![0.0f64; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                for (xg, w) in xgrad.iter_mut().zip(layer.row(o)) {
                    *xg += f64::from(*w) * d;
                }
            }
            if l > 0 {
                delta = trace.pre_activations[l - 1]
                    .iter()
                    .zip(&xgrad)
                    .map(|(&z, g)| g * leaky_relu_grad(z, slope))
                    .collect();
            } else {
                input_grads.push(xgrad);
            }
        }
    }
    Ok((grads, input_grads))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment buffers and the step counter.
/// One trainer thread owns this; updates must be externally serialized.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<LayerGrads>,
    v: Vec<LayerGrads>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &NetworkParams) -> Self {
        let zeros = || ParamGrads::zeros_like(params).layers;
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient rejects the step,
/// leaving state and parameters untouched.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut NetworkParams,
    grads: &ParamGrads,
) -> Result<()> {
    if !grads.matches(params) || state.m.len() != params.layers.len() {
        return Err(Error::Validation(
            "gradient shapes do not match the network".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient; step rejected".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.cfg;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let (m, v, g) = (&mut state.m[l], &mut state.v[l], &grads.layers[l]);
        let update = |p: &mut f32, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = (f64::from(*p) - learning_rate * m_hat / (v_hat.sqrt() + epsilon)) as f32;
        };
        for i in 0..layer.weights.len() {
            update(
                &mut layer.weights[i],
                &mut m.weights[i],
                &mut v.weights[i],
                g.weights[i],
            );
        }
        for i in 0..layer.bias.len() {
            update(
                &mut layer.bias[i],
                &mut m.bias[i],
                &mut v.bias[i],
                g.bias[i],
            );
        }
    }
    Ok(())
}

/// Writes a checkpoint: `"MILN1"` | layer count u64 | per layer (out, in: u64;
/// weights f32 row-major; bias f32) | K u64 | D u64 | neg_slope f32, all LE.
pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    params.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(params.layers.len() as u64).to_le_bytes())?;
    for layer in &params.layers {
        w.write_all(&(layer.out_dim as u64).to_le_bytes())?;
        w.write_all(&(layer.in_dim as u64).to_le_bytes())?;
        for v in &layer.weights {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &layer.bias {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&(params.output_dim() as u64).to_le_bytes())?;
    w.write_all(&(params.input_dim() as u64).to_le_bytes())?;
    w.write_all(&params.neg_slope.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint written by [`save_checkpoint`]; roundtrips are
/// bit-exact.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let n_layers = read_u64(&mut r)? as usize;
    if n_layers == 0 {
        return Err(Error::Format("checkpoint has no layers".into()));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out_dim = read_u64(&mut r)? as usize;
        let in_dim = read_u64(&mut r)? as usize;
        let count = out_dim
            .checked_mul(in_dim)
            .ok_or_else(|| Error::Format("layer sizes overflow".into()))?;
        let mut weights = vec![0f32; count];
        for v in &mut weights {
            *v = read_f32(&mut r)?;
        }
        let mut bias = vec![0f32; out_dim];
        for v in &mut bias {
            *v = read_f32(&mut r)?;
        }
        layers.push(DenseLayer {
            out_dim,
            in_dim,
            weights,
            bias,
        });
    }
    let k = read_u64(&mut r)? as usize;
    let d = read_u64(&mut r)? as usize;
    let neg_slope = read_f32(&mut r)?;
    let params = NetworkParams { layers, neg_slope };
    if params.output_dim() != k || params.input_dim() != d {
        return Err(Error::Format(format!(
            "metadata (K={k}, D={d}) disagrees with layer shapes ({}, {})",
            params.output_dim(),
            params.input_dim()
        )));
    }
    params.validate()?;
    Ok(params)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format("file truncated".into()))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(f32::from_le_bytes(b))
}
