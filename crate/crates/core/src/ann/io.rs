//! Model persistence: JSON with explicit shape and normalization fields,
//! validated on load. Parameters survive a save/load round trip bit for
//! bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, Normalization, TrainConfig};
use crate::num::Real;
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;
const ACTIVATION: &str = "softplus";

#[derive(Debug, Serialize, Deserialize)]
struct AdamMeta {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NormalizationData {
    feature_shift: Vec<f64>,
    feature_scale: Vec<f64>,
    label_shift: Vec<f64>,
    label_scale: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    layer_sizes: Vec<usize>,
    activation: String,
    /// Row-major `layer_sizes[l+1] x layer_sizes[l]` per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    normalization: NormalizationData,
    adam_meta: AdamMeta,
    training_config: TrainConfig,
}

fn widen<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn narrow<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

/// Writes the model, its normalization and the training configuration used
/// to produce it.
pub fn save_model<T: Real>(
    mlp: &Mlp<T>,
    normalization: &Normalization<T>,
    training_config: &TrainConfig,
    path: &Path,
) -> Result<()> {
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        layer_sizes: mlp.layer_sizes().to_vec(),
        activation: ACTIVATION.to_string(),
        weights: mlp.weights().iter().map(|w| widen(w)).collect(),
        biases: mlp.biases().iter().map(|b| widen(b)).collect(),
        normalization: NormalizationData {
            feature_shift: widen(&normalization.feature_shift),
            feature_scale: widen(&normalization.feature_scale),
            label_shift: widen(&normalization.label_shift),
            label_scale: widen(&normalization.label_scale),
        },
        adam_meta: AdamMeta {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        },
        training_config: training_config.clone(),
    };
    let out = std::fs::File::create(path)?;
    serde_json::to_writer(std::io::BufWriter::new(out), &file)?;
    Ok(())
}

/// Reads and validates a model file.
pub fn load_model<T: Real>(path: &Path) -> Result<(Mlp<T>, Normalization<T>)> {
    let file = std::fs::File::open(path)?;
    let data: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))?;
    if data.format_version != FORMAT_VERSION {
        return Err(Error::ModelFormat {
            field: "format_version",
            reason: format!("expected {FORMAT_VERSION}, found {}", data.format_version),
        });
    }
    if data.activation != ACTIVATION {
        return Err(Error::ModelFormat {
            field: "activation",
            reason: format!("expected {ACTIVATION:?}, found {:?}", data.activation),
        });
    }
    let sizes = &data.layer_sizes;
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::ModelFormat {
            field: "layer_sizes",
            reason: format!("invalid shape {sizes:?}"),
        });
    }
    let layers = sizes.len() - 1;
    if data.weights.len() != layers {
        return Err(Error::ModelFormat {
            field: "layer_sizes",
            reason: format!("{} weight matrices for {layers} layers", data.weights.len()),
        });
    }
    if data.biases.len() != layers {
        return Err(Error::ModelFormat {
            field: "layer_sizes",
            reason: format!("{} bias vectors for {layers} layers", data.biases.len()),
        });
    }
    for l in 0..layers {
        if data.weights[l].len() != sizes[l] * sizes[l + 1] {
            return Err(Error::ModelFormat {
                field: "weights",
                reason: format!("layer {l}: expected {} entries", sizes[l] * sizes[l + 1]),
            });
        }
        if data.biases[l].len() != sizes[l + 1] {
            return Err(Error::ModelFormat {
                field: "biases",
                reason: format!("layer {l}: expected {} entries", sizes[l + 1]),
            });
        }
        if data.weights[l].iter().chain(&data.biases[l]).any(|v| !v.is_finite()) {
            return Err(Error::ModelFormat {
                field: "weights",
                reason: format!("layer {l}: non-finite parameter"),
            });
        }
    }
    let d_in = sizes[0];
    let d_out = sizes[layers];
    let norm = &data.normalization;
    if norm.feature_shift.len() != d_in
        || norm.feature_scale.len() != d_in
        || norm.label_shift.len() != d_out
        || norm.label_scale.len() != d_out
    {
        return Err(Error::ModelFormat {
            field: "normalization",
            reason: "shift/scale lengths do not match layer_sizes".into(),
        });
    }
    if norm
        .feature_scale
        .iter()
        .chain(&norm.label_scale)
        .any(|&s| !(s > 0.0) || !s.is_finite())
    {
        return Err(Error::ModelFormat {
            field: "normalization",
            reason: "scales must be positive".into(),
        });
    }

    let mlp = Mlp::from_parts(
        data.layer_sizes.clone(),
        data.weights.iter().map(|w| narrow(w)).collect(),
        data.biases.iter().map(|b| narrow(b)).collect(),
    );
    let normalization = Normalization {
        feature_shift: narrow(&norm.feature_shift),
        feature_scale: narrow(&norm.feature_scale),
        label_shift: narrow(&norm.label_shift),
        label_scale: narrow(&norm.label_scale),
    };
    Ok((mlp, normalization))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::RngStream;

    fn fixture() -> (Mlp<f64>, Normalization<f64>, TrainConfig) {
        let mut s = RngStream::new(21, 0);
        let mlp = Mlp::new(&[5, 8, 3], &mut s).unwrap();
        let norm = Normalization {
            feature_shift: vec![0.1; 5],
            feature_scale: vec![1.5; 5],
            label_shift: vec![-0.2; 3],
            label_scale: vec![0.7; 3],
        };
        (mlp, norm, TrainConfig::default())
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("sevenleague_test_model_io");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mlp, norm, tc) = fixture();
        let path = tmp("model.json");
        save_model(&mlp, &norm, &tc, &path).unwrap();
        let (loaded, loaded_norm) = load_model::<f64>(&path).unwrap();
        assert_eq!(mlp, loaded);
        assert_eq!(norm, loaded_norm);

        let batch: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let a = mlp.forward(&batch, 2).unwrap();
        let b = loaded.forward(&batch, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn wrong_layer_count_rejected() {
        let (mlp, norm, tc) = fixture();
        let path = tmp("bad_layers.json");
        save_model(&mlp, &norm, &tc, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"layer_sizes\":[5,8,3]", "\"layer_sizes\":[5,8,8,3]");
        std::fs::write(&path, text).unwrap();
        match load_model::<f64>(&path) {
            Err(Error::ModelFormat { field, .. }) => assert_eq!(field, "layer_sizes"),
            other => panic!("expected layer_sizes failure, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_rejected() {
        let (mlp, norm, tc) = fixture();
        let path = tmp("bad_version.json");
        save_model(&mlp, &norm, &tc, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"format_version\":1", "\"format_version\":2");
        std::fs::write(&path, text).unwrap();
        match load_model::<f64>(&path) {
            Err(Error::ModelFormat { field, .. }) => assert_eq!(field, "format_version"),
            other => panic!("expected format_version failure, got {other:?}"),
        }
    }
}
