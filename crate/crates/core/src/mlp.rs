//! Feed-forward mask estimator.
//!
//! ReLU hidden layers and a sigmoid output layer, trained on the squared
//! error between biased logarithms of the estimated and target masks:
//!
//! ```text
//! J = sum_k (ln(m_hat[k] + eps) - ln(m[k] + eps))^2
//! ```
//!
//! The gradients returned by [`backward`] are those of the batch mean of
//! `J`. The ReLU derivative at exactly zero is taken as zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SNRDNN1\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn id(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        }
    }

    fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
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

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`, row-major.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Checks that dimensions chain and that only the last layer is a
    /// sigmoid.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return Err(Error::shape("layer bias", l.output_dim(), l.bias.len()));
            }
            if l.input_dim() == 0 || l.output_dim() == 0 {
                return Err(Error::InvalidConfig(format!("layer {i} has a zero dimension")));
            }
            if i > 0 && layers[i - 1].output_dim() != l.input_dim() {
                return Err(Error::shape("layer input", layers[i - 1].output_dim(), l.input_dim()));
            }
            let expected = if i + 1 == layers.len() {
                Activation::Sigmoid
            } else {
                Activation::Relu
            };
            if l.activation != expected {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} must use {expected:?}, found {:?}",
                    l.activation
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Mask estimate for one feature vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("model input", self.input_dim(), input.len()));
        }
        let mut a = Array1::from(input.to_vec());
        for l in &self.layers {
            let mut z = l.weights.dot(&a);
            z += &l.bias;
            z.mapv_inplace(|v| l.activation.apply(v));
            a = z;
        }
        Ok(a.to_vec())
    }

    /// Mask estimates for a batch (`rows = samples`).
    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::shape("model input", self.input_dim(), inputs.ncols()));
        }
        let mut a = inputs.to_owned();
        for l in &self.layers {
            let mut z = a.dot(&l.weights.t());
            z += &l.bias;
            z.mapv_inplace(|v| l.activation.apply(v));
            a = z;
        }
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    /// Little-endian layout: magic, version, layer count, per-layer
    /// `(in, out, activation)` headers, then for each layer its row-major
    /// weights followed by its biases.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.input_dim() as u32).to_le_bytes())?;
            w.write_all(&(l.output_dim() as u32).to_le_bytes())?;
            w.write_all(&[l.activation.id()])?;
        }
        for l in &self.layers {
            for v in l.weights.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in l.bias.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let truncated = || Error::CorruptModel("file is truncated".into());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| truncated())?;
        if &magic != MODEL_MAGIC {
            return Err(Error::CorruptModel(format!(
                "bad magic {:?}, expected \"SNRDNN1\\0\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut word).map_err(|_| truncated())?;
            Ok(u32::from_le_bytes(word))
        };
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::CorruptModel(format!("unsupported format version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        if count == 0 || count > 1024 {
            return Err(Error::CorruptModel(format!("implausible layer count {count}")));
        }
        let mut headers = Vec::with_capacity(count);
        for _ in 0..count {
            let input = read_u32(&mut r)? as usize;
            let output = read_u32(&mut r)? as usize;
            let mut act = [0u8; 1];
            r.read_exact(&mut act).map_err(|_| truncated())?;
            let activation = Activation::from_id(act[0])
                .ok_or_else(|| Error::CorruptModel(format!("unknown activation id {}", act[0])))?;
            headers.push((input, output, activation));
        }
        let mut buf = [0u8; 8];
        let mut read_f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut v = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(|_| truncated())?;
                let x = f64::from_le_bytes(buf);
                if !x.is_finite() {
                    return Err(Error::CorruptModel(format!("non-finite parameter {x}")));
                }
                v.push(x);
            }
            Ok(v)
        };
        let mut layers = Vec::with_capacity(count);
        for (input, output, activation) in headers {
            let weights = read_f64s(&mut r, input * output)?;
            let bias = read_f64s(&mut r, output)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((output, input), weights)
                    .map_err(|e| Error::CorruptModel(e.to_string()))?,
                bias: Array1::from(bias),
                activation,
            });
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(|_| truncated())? != 0 {
            return Err(Error::CorruptModel("trailing bytes after parameters".into()));
        }
        MlpModel::new(layers).map_err(|e| Error::CorruptModel(e.to_string()))
    }
}

/// Uniform Glorot initialization with zero biases.
pub fn glorot_init(dims: &[usize], seed: u64) -> Result<MlpModel> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer dimensions {dims:?} need at least two nonzero entries"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = dims.len() - 1;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, pair)| {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-limit..=limit)
            });
            Layer {
                weights,
                bias: Array1::zeros(fan_out),
                activation: if i + 1 == n_layers {
                    Activation::Sigmoid
                } else {
                    Activation::Relu
                },
            }
        })
        .collect();
    MlpModel::new(layers)
}

/// Biased log-spectral squared error summed over the given bins.
pub fn loss(irm_hat: &[f64], irm: &[f64], eps: f64) -> f64 {
    irm_hat
        .iter()
        .zip(irm)
        .map(|(h, t)| {
            let d = (h + eps).ln() - (t + eps).ln();
            d * d
        })
        .sum()
}

/// Mean of the per-sample loss over the rows of a batch.
pub fn batch_loss(irm_hat: ArrayView2<f64>, irm: ArrayView2<f64>, eps: f64) -> f64 {
    let total: f64 = irm_hat
        .iter()
        .zip(irm.iter())
        .map(|(h, t)| {
            let d = (h + eps).ln() - (t + eps).ln();
            d * d
        })
        .sum();
    total / irm_hat.nrows().max(1) as f64
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Gradients of the batch-mean loss and the batch-mean loss itself.
pub fn backward(
    model: &MlpModel,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    eps: f64,
) -> Result<(Gradients, f64)> {
    let batch = inputs.nrows();
    if batch == 0 {
        return Err(Error::EmptyInput("backward pass needs a nonempty batch".into()));
    }
    if inputs.ncols() != model.input_dim() {
        return Err(Error::shape("model input", model.input_dim(), inputs.ncols()));
    }
    if targets.nrows() != batch {
        return Err(Error::shape("target rows", batch, targets.nrows()));
    }
    if targets.ncols() != model.output_dim() {
        return Err(Error::shape("target bins", model.output_dim(), targets.ncols()));
    }

    // Forward pass keeping pre-activations and activations.
    let mut acts: Vec<Array2<f64>> = Vec::with_capacity(model.layers.len() + 1);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(model.layers.len());
    acts.push(inputs.to_owned());
    for l in &model.layers {
        let mut z = acts.last().expect("input pushed").dot(&l.weights.t());
        z += &l.bias;
        let a = z.mapv(|v| l.activation.apply(v));
        pre.push(z);
        acts.push(a);
    }

    let output = acts.last().expect("at least one layer");
    let loss_value = batch_loss(output.view(), targets, eps);
    let inv_batch = 1.0 / batch as f64;
    let mut delta = Array2::from_shape_fn(output.raw_dim(), |(i, k)| {
        let y = output[[i, k]];
        let t = targets[[i, k]];
        let d_y = 2.0 * ((y + eps).ln() - (t + eps).ln()) / (y + eps);
        d_y * y * (1.0 - y) * inv_batch
    });

    let mut grads = Vec::with_capacity(model.layers.len());
    for idx in (0..model.layers.len()).rev() {
        let layer = &model.layers[idx];
        let d_w = delta.t().dot(&acts[idx]);
        let d_b = delta.sum_axis(Axis(0));
        if idx > 0 {
            let mut d_prev = delta.dot(&layer.weights);
            let z_prev = &pre[idx - 1];
            d_prev.zip_mut_with(z_prev, |d, z| {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = d_prev;
        }
        grads.push((d_w, d_b));
    }
    grads.reverse();
    Ok((Gradients { layers: grads }, loss_value))
}

/// Per-parameter adaptive step sizes from accumulated squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    pub accumulators: Vec<(Array2<f64>, Array1<f64>)>,
    pub learning_rate: f64,
    pub stability_eps: f64,
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.005;
pub const DEFAULT_STABILITY_EPS: f64 = 1e-8;

impl AdaGradState {
    pub fn new(model: &MlpModel, learning_rate: f64, stability_eps: f64) -> Self {
        Self {
            accumulators: Gradients::zeros_like(model).layers,
            learning_rate,
            stability_eps,
        }
    }

    pub fn with_defaults(model: &MlpModel) -> Self {
        Self::new(model, DEFAULT_LEARNING_RATE, DEFAULT_STABILITY_EPS)
    }

    /// `acc += g^2; p -= lr * g / (sqrt(acc) + eps)`.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != model.layers.len() || self.accumulators.len() != model.layers.len() {
            return Err(Error::shape("gradient layers", model.layers.len(), grads.layers.len()));
        }
        for ((layer, (gw, gb)), (aw, ab)) in model
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.accumulators.iter_mut())
        {
            if gw.raw_dim() != layer.weights.raw_dim() || gb.len() != layer.bias.len() {
                return Err(Error::shape("gradient parameters", layer.weights.len(), gw.len()));
            }
            let (lr, eps) = (self.learning_rate, self.stability_eps);
            ndarray::Zip::from(&mut layer.weights).and(gw).and(aw).for_each(|p, g, a| {
                *a += g * g;
                *p -= lr * g / (a.sqrt() + eps);
            });
            ndarray::Zip::from(&mut layer.bias).and(gb).and(ab).for_each(|p, g, a| {
                *a += g * g;
                *p -= lr * g / (a.sqrt() + eps);
            });
        }
        Ok(())
    }
}
