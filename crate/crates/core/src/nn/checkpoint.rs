//! Model checkpoints: `u32` LE header length, header JSON, then every
//! trainable tensor as `f32` LE in declaration order (w1, b1, w2, b2, mixer).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use super::train::TrainConfig;
use crate::embstore::LayerMixer;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub layers: Option<usize>,
    pub labels: Vec<String>,
    pub train: TrainConfig,
    /// Task details (task id, pooling, layer mode, ...).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut w: W, header: &CheckpointHeader, model: &MlpModel) -> Result<()> {
    if header.input_dim != model.input_dim
        || header.hidden != model.hidden
        || header.classes != model.classes
        || header.layers != model.mixer.as_ref().map(LayerMixer::layers)
    {
        return Err(Error::Shape("checkpoint header does not match model".into()));
    }
    let json = serde_json::to_vec(header)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for tensor in model.tensors() {
        let mut buf = Vec::with_capacity(tensor.len() * 4);
        for &x in tensor {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, MlpModel)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::Length("checkpoint header length".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::Length("checkpoint header".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut model = MlpModel::zeros(header.input_dim, header.hidden, header.classes, header.layers);
    for tensor in model.tensors_mut() {
        let mut buf = vec![0u8; tensor.len() * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Length("checkpoint tensors".into()))?;
        for (x, c) in tensor.iter_mut().zip(buf.chunks_exact(4)) {
            *x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
        }
    }
    Ok((header, model))
}
