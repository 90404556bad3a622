//! Model checkpoints: a JSON archive of the architecture config, the named
//! parameter tensors, and the batchnorm running statistics. JSON keeps the
//! format inspectable; shortest-round-trip float serialization makes load
//! bit-exact for both scalar widths.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{ModelConfig, SedModel};

const FORMAT: &str = "seddet-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BnState {
    mean: Vec<f64>,
    var: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Archive {
    format: String,
    scalar: String,
    /// Hash of the full run configuration the model was trained under;
    /// standalone evaluation refuses mismatched configs.
    config_hash: String,
    init_seed: u64,
    config: ModelConfig,
    tensors: Vec<Tensor>,
    bn_running: Vec<BnState>,
}

/// Write `model` to `path` as JSON.
pub fn save_checkpoint<F: Real>(model: &SedModel<F>, config_hash: &str, path: &Path) -> Result<()> {
    let tensors = model
        .layout
        .blocks
        .iter()
        .map(|b| Tensor {
            name: b.name.to_string(),
            shape: b.shape.clone(),
            data: model.params[b.offset..b.offset + b.len()]
                .iter()
                .map(|v| v.to_f64().expect("finite parameter"))
                .collect(),
        })
        .collect();
    let bn_running = model
        .bn_running
        .iter()
        .map(|r| BnState {
            mean: r.mean.iter().map(|v| v.to_f64().unwrap()).collect(),
            var: r.var.iter().map(|v| v.to_f64().unwrap()).collect(),
        })
        .collect();
    let archive = Archive {
        format: FORMAT.to_string(),
        scalar: F::NAME.to_string(),
        config_hash: config_hash.to_string(),
        init_seed: model.init_seed,
        config: model.config.clone(),
        tensors,
        bn_running,
    };
    let text = serde_json::to_string(&archive)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`] with the same scalar
/// type; returns the model and the stored run-config hash.
pub fn load_checkpoint<F: Real>(path: &Path) -> Result<(SedModel<F>, String)> {
    let text = fs::read_to_string(path)?;
    let archive: Archive = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if archive.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unsupported format {:?}, expected {FORMAT:?}",
            archive.format
        )));
    }
    if archive.scalar != F::NAME {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} parameters, loader instantiated for {}",
            archive.scalar,
            F::NAME
        )));
    }
    let mut model = SedModel::<F>::init(archive.config, archive.init_seed)?;
    if archive.tensors.len() != model.layout.blocks.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, found {}",
            model.layout.blocks.len(),
            archive.tensors.len()
        )));
    }
    for (tensor, block) in archive.tensors.iter().zip(model.layout.blocks.clone()) {
        if tensor.name != block.name {
            return Err(Error::Checkpoint(format!(
                "tensor order mismatch: {:?} where {:?} expected",
                tensor.name, block.name
            )));
        }
        if tensor.shape != block.shape {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} has shape {:?}, expected {:?}",
                tensor.name, tensor.shape, block.shape
            )));
        }
        if tensor.data.len() != block.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} has {} values, expected {}",
                tensor.name,
                tensor.data.len(),
                block.len()
            )));
        }
        for (slot, &v) in
            model.params[block.offset..block.offset + block.len()].iter_mut().zip(&tensor.data)
        {
            *slot = F::from_f64(v)
                .ok_or_else(|| Error::Checkpoint(format!("non-finite value in {}", tensor.name)))?;
        }
    }
    if archive.bn_running.len() != model.bn_running.len() {
        return Err(Error::Checkpoint("batchnorm state count mismatch".into()));
    }
    for (state, slot) in archive.bn_running.iter().zip(model.bn_running.iter_mut()) {
        if state.mean.len() != slot.mean.len() || state.var.len() != slot.var.len() {
            return Err(Error::Checkpoint("batchnorm state width mismatch".into()));
        }
        slot.mean = Array1::from_iter(state.mean.iter().map(|&v| F::from_f64(v).unwrap()));
        slot.var = Array1::from_iter(state.var.iter().map(|&v| F::from_f64(v).unwrap()));
    }
    Ok((model, archive.config_hash))
}
