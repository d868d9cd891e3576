//! A from-scratch multilayer perceptron for regressing conditional
//! collocation points: Glorot-initialized affine layers, softplus hidden
//! activations, identity output, mean-squared-error loss with reverse-mode
//! gradients, and the Adam optimizer.
//!
//! One network carries all `m` outputs; the hidden stack defaults to four
//! layers of 50 units.

mod adam;
mod io;
mod train;

pub use adam::AdamState;
pub use io::{load_model, save_model};
pub use train::{train, EpochStats, Normalization, TrainConfig, TrainResult};

use crate::num::Real;
use crate::simulate::RngStream;
use crate::{Error, Result};

/// Default hidden stack: four layers of 50 units.
pub const DEFAULT_HIDDEN: [usize; 4] = [50, 50, 50, 50];

/// Feed-forward network: affine layers with softplus hidden activations and
/// an identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layer_sizes: Vec<usize>,
    /// `weights[l]` is `layer_sizes[l+1] x layer_sizes[l]`, row-major.
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
}

/// Gradients shaped like the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Numerically safe softplus: `ln(1 + exp(z)) = max(z, 0) + ln(1 + exp(-|z|))`.
#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the softplus derivative.
#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Glorot-uniform weight matrix of shape `fan_out x fan_in` (row-major):
/// i.i.d. uniform on `[-L, L]`, `L = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init<T: Real>(fan_in: usize, fan_out: usize, stream: &mut RngStream) -> Vec<T> {
    assert!(fan_in >= 1 && fan_out >= 1);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out)
        .map(|_| T::of((2.0 * stream.next_uniform() - 1.0) * limit))
        .collect()
}

impl<T: Real> Mlp<T> {
    /// Fresh network with Glorot weights and zero biases.
    pub fn new(layer_sizes: &[usize], stream: &mut RngStream) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer_sizes must list input, hidden and output widths >= 1, got {layer_sizes:?}"
            )));
        }
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 0..layer_sizes.len() - 1 {
            weights.push(glorot_init(layer_sizes[l], layer_sizes[l + 1], stream));
            biases.push(vec![T::zero(); layer_sizes[l + 1]]);
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub(crate) fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<T>>,
        biases: Vec<Vec<T>>,
    ) -> Self {
        Mlp {
            layer_sizes,
            weights,
            biases,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn weights(&self) -> &[Vec<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.biases
    }

    /// Zero-valued gradients shaped like this network.
    pub fn zero_grads(&self) -> MlpGrads<T> {
        MlpGrads {
            weights: self.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    /// Affine layer `l` applied to `rows` stacked inputs.
    fn affine(&self, l: usize, input: &[T], rows: usize, out: &mut Vec<T>) {
        let fan_in = self.layer_sizes[l];
        let fan_out = self.layer_sizes[l + 1];
        let w = &self.weights[l];
        let b = &self.biases[l];
        out.clear();
        out.reserve(rows * fan_out);
        for r in 0..rows {
            let x = &input[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(x) {
                    acc = acc + *wi * *xi;
                }
                out.push(acc);
            }
        }
    }

    /// Batched forward pass: `rows x input_dim` in, `rows x output_dim` out,
    /// row order preserved. An empty batch yields an empty output.
    pub fn forward(&self, batch: &[T], rows: usize) -> Result<Vec<T>> {
        if batch.len() != rows * self.input_dim() {
            return Err(Error::Config(format!(
                "batch of {} values is not {} rows x {} inputs",
                batch.len(),
                rows,
                self.input_dim()
            )));
        }
        let layers = self.layer_sizes.len() - 1;
        let mut current = batch.to_vec();
        let mut next = Vec::new();
        for l in 0..layers {
            self.affine(l, &current, rows, &mut next);
            if l + 1 < layers {
                for z in next.iter_mut() {
                    *z = softplus(*z);
                }
            }
            std::mem::swap(&mut current, &mut next);
        }
        Ok(current)
    }
}

/// Mean-squared-error loss over a batch and its parameter gradients by
/// reverse-mode accumulation.
///
/// `batch` is `rows x input_dim`, `targets` is `rows x output_dim`; the
/// loss is the mean of squared residuals over all `rows * output_dim`
/// entries.
pub fn loss_and_grad<T: Real>(
    mlp: &Mlp<T>,
    batch: &[T],
    rows: usize,
    targets: &[T],
) -> Result<(T, MlpGrads<T>)> {
    if batch.len() != rows * mlp.input_dim() {
        return Err(Error::Config("batch shape mismatch".into()));
    }
    if targets.len() != rows * mlp.output_dim() {
        return Err(Error::Config("target shape mismatch".into()));
    }
    let layers = mlp.layer_sizes.len() - 1;
    let mut grads = mlp.zero_grads();
    if rows == 0 {
        return Ok((T::zero(), grads));
    }

    // Forward, caching pre-activations and activations per layer.
    let mut acts: Vec<Vec<T>> = Vec::with_capacity(layers + 1);
    acts.push(batch.to_vec());
    let mut zs: Vec<Vec<T>> = Vec::with_capacity(layers);
    for l in 0..layers {
        let mut z = Vec::new();
        mlp.affine(l, &acts[l], rows, &mut z);
        let a = if l + 1 < layers {
            z.iter().map(|&v| softplus(v)).collect()
        } else {
            z.clone()
        };
        zs.push(z);
        acts.push(a);
    }

    let d_out = mlp.output_dim();
    let denom = T::of_usize(rows * d_out);
    let output = &acts[layers];
    let mut loss = T::zero();
    let mut delta: Vec<T> = Vec::with_capacity(rows * d_out);
    for (&y, &t) in output.iter().zip(targets) {
        let r = y - t;
        loss = loss + r * r;
        delta.push(T::of(2.0) * r / denom);
    }
    loss = loss / denom;

    // Backward sweep.
    for l in (0..layers).rev() {
        let fan_in = mlp.layer_sizes[l];
        let fan_out = mlp.layer_sizes[l + 1];
        let below = &acts[l];
        {
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for r in 0..rows {
                let d_row = &delta[r * fan_out..(r + 1) * fan_out];
                let a_row = &below[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let d = d_row[o];
                    gb[o] = gb[o] + d;
                    let g_row = &mut gw[o * fan_in..(o + 1) * fan_in];
                    for (g, a) in g_row.iter_mut().zip(a_row) {
                        *g = *g + d * *a;
                    }
                }
            }
        }
        if l > 0 {
            // delta_below = (W^T delta) .* sigmoid(z_{l-1})
            let w = &mlp.weights[l];
            let mut below_delta = vec![T::zero(); rows * fan_in];
            for r in 0..rows {
                let d_row = &delta[r * fan_out..(r + 1) * fan_out];
                let acc = &mut below_delta[r * fan_in..(r + 1) * fan_in];
                for o in 0..fan_out {
                    let d = d_row[o];
                    let w_row = &w[o * fan_in..(o + 1) * fan_in];
                    for (slot, wi) in acc.iter_mut().zip(w_row) {
                        *slot = *slot + d * *wi;
                    }
                }
            }
            let z_below = &zs[l - 1];
            for (slot, &z) in below_delta.iter_mut().zip(z_below) {
                *slot = *slot * sigmoid(z);
            }
            delta = below_delta;
        }
    }

    Ok((loss, grads))
}
