//! Mini-batch training loop with feature/label normalization, a held-out
//! validation split, and early stopping on the validation loss.

use serde::{Deserialize, Serialize};

use super::{loss_and_grad, AdamState, Mlp, DEFAULT_HIDDEN};
use crate::num::Real;
use crate::simulate::{RngStream, TrainingSet, FEATURE_DIM};
use crate::{Error, Result};

/// Columns with standard deviation below this are treated as constant and
/// given unit scale.
const MIN_COLUMN_STD: f64 = 1e-12;

/// Per-column shift/scale for inputs and labels. Scales are strictly
/// positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization<T> {
    pub feature_shift: Vec<T>,
    pub feature_scale: Vec<T>,
    pub label_shift: Vec<T>,
    pub label_scale: Vec<T>,
}

fn fit_columns<T: Real>(data: &[T], dim: usize) -> (Vec<T>, Vec<T>) {
    let rows = data.len() / dim;
    let n = T::of_usize(rows.max(1));
    let mut shift = vec![T::zero(); dim];
    let mut scale = vec![T::zero(); dim];
    for row in data.chunks_exact(dim) {
        for (s, &v) in shift.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    for s in shift.iter_mut() {
        *s = *s / n;
    }
    for row in data.chunks_exact(dim) {
        for (c, (&v, &mu)) in scale.iter_mut().zip(row.iter().zip(&shift)) {
            let d = v - mu;
            *c = *c + d * d;
        }
    }
    for c in scale.iter_mut() {
        let std = (*c / n).sqrt();
        *c = if std > T::of(MIN_COLUMN_STD) {
            std
        } else {
            T::one()
        };
    }
    (shift, scale)
}

impl<T: Real> Normalization<T> {
    /// Column statistics of the given feature/label rows.
    pub fn fit(features: &[T], feature_dim: usize, labels: &[T], label_dim: usize) -> Self {
        let (feature_shift, feature_scale) = fit_columns(features, feature_dim);
        let (label_shift, label_scale) = fit_columns(labels, label_dim);
        Normalization {
            feature_shift,
            feature_scale,
            label_shift,
            label_scale,
        }
    }

    pub fn normalize_features(&self, rows: &[T]) -> Vec<T> {
        self.apply(rows, &self.feature_shift, &self.feature_scale)
    }

    pub fn normalize_labels(&self, rows: &[T]) -> Vec<T> {
        self.apply(rows, &self.label_shift, &self.label_scale)
    }

    pub fn denormalize_labels(&self, rows: &[T]) -> Vec<T> {
        let dim = self.label_shift.len();
        rows.chunks_exact(dim)
            .flat_map(|row| {
                row.iter()
                    .zip(self.label_shift.iter().zip(&self.label_scale))
                    .map(|(&v, (&mu, &sc))| v * sc + mu)
            })
            .collect()
    }

    fn apply(&self, rows: &[T], shift: &[T], scale: &[T]) -> Vec<T> {
        let dim = shift.len();
        rows.chunks_exact(dim)
            .flat_map(|row| {
                row.iter()
                    .zip(shift.iter().zip(scale))
                    .map(|(&v, (&mu, &sc))| (v - mu) / sc)
            })
            .collect()
    }
}

/// Training hyperparameters. Defaults: up to 200 epochs with patience 20,
/// batch size 1024, learning rate 1e-3, four hidden layers of 50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
    pub validation_fraction: f64,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 1024,
            learning_rate: 1e-3,
            seed: 1,
            hidden_layers: DEFAULT_HIDDEN.to_vec(),
            validation_fraction: 0.1,
            patience: 20,
        }
    }
}

/// One row of the loss history, in normalized units. `best_val_mse` is the
/// running minimum and is nonincreasing across the history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub best_val_mse: f64,
}

/// A trained network with its normalization and loss history.
#[derive(Debug, Clone)]
pub struct TrainResult<T> {
    pub mlp: Mlp<T>,
    pub normalization: Normalization<T>,
    pub history: Vec<EpochStats>,
    /// Validation RMSE of the returned (best) model, in label units.
    pub val_rmse_label_units: f64,
}

fn shuffle(indices: &mut [usize], stream: &mut RngStream) {
    for i in (1..indices.len()).rev() {
        let j = ((stream.next_u64() as u128 * (i as u128 + 1)) >> 64) as usize;
        indices.swap(i, j);
    }
}

/// Trains a fresh network on the data set.
///
/// The dataset is split into a training part and a held-out validation
/// part (seeded shuffle), features and labels are normalized with the
/// training part's column statistics, batches are reshuffled each epoch,
/// and the parameters with the best validation loss are returned. The
/// whole pipeline is deterministic in `(dataset, config)`.
pub fn train<T: Real>(dataset: &TrainingSet<T>, config: &TrainConfig) -> Result<TrainResult<T>> {
    let n = dataset.n_samples();
    if n == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&config.validation_fraction) {
        return Err(Error::Config("validation_fraction must be in [0, 1)".into()));
    }
    let m = dataset.m();
    let carve_validation = config.validation_fraction > 0.0;
    if carve_validation && n < 2 {
        return Err(Error::Config(
            "need at least 2 samples to carve a validation split".into(),
        ));
    }
    let n_val = ((n as f64) * config.validation_fraction).round() as usize;
    let n_val = n_val.clamp(usize::from(carve_validation), n - 1);
    let n_train = n - n_val;

    let mut split_stream = RngStream::new(config.seed, 0);
    let mut init_stream = RngStream::new(config.seed, 1);
    let mut epoch_stream = RngStream::new(config.seed, 2);

    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut split_stream);
    let (train_idx, val_idx) = order.split_at(n_train);

    let mut train_features = Vec::with_capacity(n_train * FEATURE_DIM);
    let mut train_labels = Vec::with_capacity(n_train * m);
    for &i in train_idx {
        train_features.extend_from_slice(dataset.feature_row(i));
        train_labels.extend_from_slice(dataset.label_row(i));
    }
    let mut val_features = Vec::with_capacity(n_val * FEATURE_DIM);
    let mut val_labels = Vec::with_capacity(n_val * m);
    for &i in val_idx {
        val_features.extend_from_slice(dataset.feature_row(i));
        val_labels.extend_from_slice(dataset.label_row(i));
    }

    let norm = Normalization::fit(&train_features, FEATURE_DIM, &train_labels, m);
    let train_features = norm.normalize_features(&train_features);
    let train_labels = norm.normalize_labels(&train_labels);
    let val_features = norm.normalize_features(&val_features);
    let val_labels = norm.normalize_labels(&val_labels);

    let mut layer_sizes = Vec::with_capacity(config.hidden_layers.len() + 2);
    layer_sizes.push(FEATURE_DIM);
    layer_sizes.extend_from_slice(&config.hidden_layers);
    layer_sizes.push(m);
    let mut mlp = Mlp::new(&layer_sizes, &mut init_stream)?;
    let mut adam = AdamState::new(&mlp);
    let lr = T::of(config.learning_rate);

    let val_mse = |mlp: &Mlp<T>| -> Result<f64> {
        if n_val == 0 {
            return Ok(f64::NAN);
        }
        let pred = mlp.forward(&val_features, n_val)?;
        let mut acc = T::zero();
        for (&p, &t) in pred.iter().zip(&val_labels) {
            let r = p - t;
            acc = acc + r * r;
        }
        Ok((acc / T::of_usize(n_val * m)).as_f64())
    };

    let mut history = Vec::with_capacity(config.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_mlp = mlp.clone();
    let mut epochs_since_best = 0usize;
    let mut batch_order: Vec<usize> = (0..n_train).collect();
    let mut batch_features = vec![T::zero(); config.batch_size * FEATURE_DIM];
    let mut batch_labels = vec![T::zero(); config.batch_size * m];

    for epoch in 0..config.epochs {
        shuffle(&mut batch_order, &mut epoch_stream);
        let mut train_loss_acc = 0.0f64;
        let mut batches = 0usize;
        for chunk in batch_order.chunks(config.batch_size) {
            let rows = chunk.len();
            for (r, &i) in chunk.iter().enumerate() {
                batch_features[r * FEATURE_DIM..(r + 1) * FEATURE_DIM]
                    .copy_from_slice(&train_features[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
                batch_labels[r * m..(r + 1) * m]
                    .copy_from_slice(&train_labels[i * m..(i + 1) * m]);
            }
            let (loss, grads) = loss_and_grad(
                &mlp,
                &batch_features[..rows * FEATURE_DIM],
                rows,
                &batch_labels[..rows * m],
            )?;
            adam.step(&mut mlp, &grads, lr);
            train_loss_acc += loss.as_f64();
            batches += 1;
        }
        let train_mse = train_loss_acc / batches.max(1) as f64;
        let val = if n_val > 0 { val_mse(&mlp)? } else { train_mse };
        if val < best_val {
            best_val = val;
            best_mlp = mlp.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        history.push(EpochStats {
            epoch,
            train_mse,
            val_mse: val,
            best_val_mse: best_val,
        });
        if epochs_since_best >= config.patience {
            break;
        }
    }

    // Validation RMSE of the returned model, reported in label units.
    let val_rmse_label_units = if n_val > 0 {
        let pred_norm = best_mlp.forward(&val_features, n_val)?;
        let pred = norm.denormalize_labels(&pred_norm);
        let truth = norm.denormalize_labels(&val_labels);
        let mut acc = 0.0f64;
        for (p, t) in pred.iter().zip(&truth) {
            let r = p.as_f64() - t.as_f64();
            acc += r * r;
        }
        (acc / (n_val * m) as f64).sqrt()
    } else {
        f64::NAN
    };

    Ok(TrainResult {
        mlp: best_mlp,
        normalization: norm,
        history,
        val_rmse_label_units,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocation::gauss_hermite_grid;
    use crate::runtime::Backend;
    use crate::simulate::{generate_training_set, SamplingRanges, TrainingGenConfig};

    fn tiny_dataset() -> TrainingSet<f64> {
        let grid = gauss_hermite_grid::<f64>(2).unwrap();
        let cfg = TrainingGenConfig {
            ranges: SamplingRanges {
                y_start: (-1.0, 1.0),
                dt: (0.1, 0.5),
                mean_level: (-0.5, 0.5),
                reversion_speed: (0.5, 1.5),
                volatility: (0.1, 0.5),
            },
            n_samples: 256,
            inner_paths: 64,
            fine_step: 0.05,
            seed: 11,
        };
        generate_training_set(&cfg, &grid, &Backend::Sequential).unwrap()
    }

    #[test]
    fn normalization_round_trip() {
        let ds = tiny_dataset();
        let norm = Normalization::fit(ds.features(), FEATURE_DIM, ds.labels(), ds.m());
        for s in norm.feature_scale.iter().chain(&norm.label_scale) {
            assert!(*s > 0.0);
        }
        let normed = norm.normalize_labels(ds.labels());
        let back = norm.denormalize_labels(&normed);
        for (a, b) in back.iter().zip(ds.labels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_labels_are_learned_quickly() {
        let grid = gauss_hermite_grid::<f64>(2).unwrap();
        let cfg = TrainingGenConfig {
            ranges: SamplingRanges {
                y_start: (0.5, 0.5),
                dt: (0.25, 0.25),
                mean_level: (0.0, 0.0),
                reversion_speed: (1.0, 1.0),
                volatility: (0.0, 0.0), // deterministic terminals
            },
            n_samples: 200,
            inner_paths: 64,
            fine_step: 0.05,
            seed: 3,
        };
        let ds = generate_training_set(&cfg, &grid, &Backend::Sequential).unwrap();
        let tc = TrainConfig {
            epochs: 50,
            batch_size: 32,
            hidden_layers: vec![16, 16],
            seed: 5,
            ..TrainConfig::default()
        };
        let result = train(&ds, &tc).unwrap();
        let last = result.history.last().unwrap();
        assert!(
            last.best_val_mse < 1e-6,
            "constant labels: best val mse {}",
            last.best_val_mse
        );
    }

    #[test]
    fn training_is_deterministic() {
        let ds = tiny_dataset();
        let tc = TrainConfig {
            epochs: 8,
            batch_size: 64,
            hidden_layers: vec![12, 12],
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&ds, &tc).unwrap();
        let b = train(&ds, &tc).unwrap();
        assert_eq!(a.history, b.history, "loss history reproduces exactly");
        assert_eq!(a.mlp, b.mlp, "parameters reproduce exactly");
    }

    #[test]
    fn best_column_is_nonincreasing() {
        let ds = tiny_dataset();
        let tc = TrainConfig {
            epochs: 12,
            batch_size: 64,
            hidden_layers: vec![10],
            seed: 2,
            ..TrainConfig::default()
        };
        let result = train(&ds, &tc).unwrap();
        for w in result.history.windows(2) {
            assert!(w[1].best_val_mse <= w[0].best_val_mse);
        }
        assert!(result.val_rmse_label_units.is_finite());
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = tiny_dataset();
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(train(&ds, &tc).is_err());
    }

    #[test]
    fn single_row_dataset_rejected() {
        let grid = gauss_hermite_grid::<f64>(2).unwrap();
        let cfg = TrainingGenConfig {
            ranges: SamplingRanges {
                y_start: (0.0, 0.0),
                dt: (0.5, 0.5),
                mean_level: (0.0, 0.0),
                reversion_speed: (1.0, 1.0),
                volatility: (0.2, 0.2),
            },
            n_samples: 1,
            inner_paths: 64,
            fine_step: 0.05,
            seed: 1,
        };
        let ds = generate_training_set(&cfg, &grid, &Backend::Sequential).unwrap();
        assert!(train(&ds, &TrainConfig::default()).is_err());
    }
}
