//! Versioned JSON checkpoints with base64 little-endian tensor payloads.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::train::{EpochLoss, TrainedModel};
use super::{ModelConfig, NnError, Result, Scalar};
use crate::nn::models::Network;

pub const CHECKPOINT_MAGIC: &str = "twnn1";

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    dtype: String,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    magic: String,
    config: ModelConfig,
    history: Vec<EpochLoss>,
    tensors: Vec<TensorRecord>,
}

pub fn save_checkpoint(model: &TrainedModel) -> String {
    let tensors = model
        .params
        .iter()
        .map(|(name, t)| {
            let mut bytes = Vec::with_capacity(t.len() * f32::BYTES);
            for &v in t.as_standard_layout().iter() {
                v.write_le(&mut bytes);
            }
            TensorRecord {
                name: name.to_string(),
                shape: [t.nrows(), t.ncols()],
                dtype: f32::DTYPE.to_string(),
                data: STANDARD.encode(bytes),
            }
        })
        .collect();
    let doc = CheckpointDoc {
        magic: CHECKPOINT_MAGIC.into(),
        config: model.config.clone(),
        history: model.history.clone(),
        tensors,
    };
    serde_json::to_string(&doc).expect("checkpoint serialises")
}

/// Parses a checkpoint and checks every tensor against the architecture the
/// stored config describes.
pub fn load_checkpoint(text: &str) -> Result<TrainedModel> {
    let bad = |m: String| NnError::Checkpoint(m);
    let doc: CheckpointDoc = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    if doc.magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("unexpected magic {:?}", doc.magic)));
    }
    let mut params = Network::new(&doc.config)?.init::<f32>(doc.config.seed);
    if doc.tensors.len() != params.len() {
        return Err(bad(format!("expected {} tensors, found {}", params.len(), doc.tensors.len())));
    }
    for rec in doc.tensors {
        if rec.dtype != f32::DTYPE {
            return Err(bad(format!("tensor `{}` has dtype {}", rec.name, rec.dtype)));
        }
        let slot = params
            .get_mut(&rec.name)
            .ok_or_else(|| bad(format!("unexpected tensor `{}`", rec.name)))?;
        if slot.dim() != (rec.shape[0], rec.shape[1]) {
            return Err(bad(format!("tensor `{}` has shape {:?}, expected {:?}", rec.name, rec.shape, slot.dim())));
        }
        let bytes = STANDARD.decode(&rec.data).map_err(|e| bad(e.to_string()))?;
        if bytes.len() != slot.len() * f32::BYTES {
            return Err(bad(format!("tensor `{}` payload has {} bytes", rec.name, bytes.len())));
        }
        let values: Vec<f32> = bytes.chunks_exact(f32::BYTES).map(f32::read_le).collect();
        *slot = Array2::from_shape_vec(slot.raw_dim(), values).map_err(|e| bad(e.to_string()))?;
    }
    Ok(TrainedModel {
        config: doc.config,
        params,
        history: doc.history,
    })
}
