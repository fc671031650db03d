//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, little-endian u32 format version, u64 header length,
//! JSON header, raw tensor body, and a SHA-256 digest of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::model::SwinUNet;
use crate::pretrained::{tensor_bytes, ElementType};
use crate::train::adam::{Adam, AdamConfig};
use crate::train::engine::{RngState, TrainConfig, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADSEGCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    FirstMoment,
    SecondMoment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorIndex {
    name: String,
    role: Role,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    model_seed: u64,
    dtype: String,
    epoch: u64,
    step: u64,
    best_metric: Option<f64>,
    rng: RngState,
    adam: AdamConfig,
    adam_steps: u64,
    tensors: Vec<TensorIndex>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    CheckpointError::Corrupt {
        path: path.to_path_buf(),
        message: message.into(),
    }
    .into()
}

/// Serializes a training state to bytes.
pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let mut tensors = Vec::new();
    let mut push = |name: &str, role: Role, t: &Tensor, body: &mut Vec<u8>| -> Result<()> {
        let bytes = tensor_bytes(t)?;
        let dtype = ElementType::from_candle(t.dtype())
            .ok_or_else(|| Error::Value(format!("cannot checkpoint dtype {:?}", t.dtype())))?;
        tensors.push(TensorIndex {
            name: name.to_string(),
            role,
            dtype: dtype.tag().to_string(),
            shape: t.dims().to_vec(),
            offset: body.len() as u64,
            len: bytes.len() as u64,
        });
        body.extend_from_slice(&bytes);
        Ok(())
    };
    for (name, var) in state.model.params().iter() {
        push(name, Role::Param, var.as_tensor(), &mut body)?;
    }
    for (name, (m, v)) in state.optimizer.moments() {
        push(name, Role::FirstMoment, m, &mut body)?;
        push(name, Role::SecondMoment, v, &mut body)?;
    }
    let header = Header {
        model: state.model.config().clone(),
        train: state.config.clone(),
        model_seed: state.model.seed(),
        dtype: ElementType::from_candle(state.model.dtype())
            .map(|d| d.tag().to_string())
            .unwrap_or_default(),
        epoch: state.epoch,
        step: state.step,
        best_metric: state.best_metric,
        rng: state.rng,
        adam: state.optimizer.config(),
        adam_steps: state.optimizer.steps(),
        tensors,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::Value(e.to_string()))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header_json.len() + body.len() + DIGEST_LEN);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&body);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn save_checkpoint(state: &TrainState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(state)?;
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Parses checkpoint bytes; `path` is used only in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainState> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(path.to_path_buf()).into());
    }
    if bytes.len() < 12 {
        return Err(corrupt(path, "file ends inside the version field"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        }
        .into());
    }
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(corrupt(path, format!("file too short ({} bytes)", bytes.len())));
    }
    let (content, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(content).as_slice() != digest {
        return Err(corrupt(path, "checksum mismatch (truncated or modified file)"));
    }
    let header_len = u64::from_le_bytes(content[12..20].try_into().unwrap()) as usize;
    let header_end = PREFIX_LEN
        .checked_add(header_len)
        .filter(|&end| end <= content.len())
        .ok_or_else(|| corrupt(path, "header length exceeds file size"))?;
    let header: Header = serde_json::from_slice(&content[PREFIX_LEN..header_end])
        .map_err(|e| corrupt(path, format!("bad header: {e}")))?;
    let body = &content[header_end..];

    let dtype = ElementType::parse(&header.dtype)
        .and_then(|d| d.candle())
        .ok_or_else(|| corrupt(path, format!("unsupported model dtype `{}`", header.dtype)))?;
    let device = candle_core::Device::Cpu;
    let model = SwinUNet::new(&header.model, header.model_seed, dtype, &device)?;

    let mut params = BTreeMap::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for entry in &header.tensors {
        let start = entry.offset as usize;
        let end = start
            .checked_add(entry.len as usize)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| corrupt(path, format!("tensor `{}` lies outside the body", entry.name)))?;
        let et = ElementType::parse(&entry.dtype)
            .and_then(|d| d.candle())
            .ok_or_else(|| corrupt(path, format!("tensor `{}` has dtype `{}`", entry.name, entry.dtype)))?;
        let t = Tensor::from_raw_buffer(&body[start..end], et, &entry.shape, &device)
            .map_err(|e| corrupt(path, format!("tensor `{}`: {e}", entry.name)))?;
        let target = match entry.role {
            Role::Param => &mut params,
            Role::FirstMoment => &mut first,
            Role::SecondMoment => &mut second,
        };
        target.insert(entry.name.clone(), t);
    }
    if params.len() != model.params().len() {
        return Err(corrupt(
            path,
            format!("{} parameters stored, model has {}", params.len(), model.params().len()),
        ));
    }
    for (name, t) in &params {
        if model.params().var(name).is_none() {
            return Err(corrupt(path, format!("unknown parameter `{name}`")));
        }
        model.params().assign(name, t)?;
    }
    let mut moments = BTreeMap::new();
    for (name, var) in model.params().iter() {
        let (Some(m), Some(v)) = (first.remove(name), second.remove(name)) else {
            return Err(corrupt(path, format!("missing optimizer moments for `{name}`")));
        };
        if m.dims() != var.dims() || v.dims() != var.dims() || m.dtype() != dtype || v.dtype() != dtype {
            return Err(corrupt(path, format!("moments of `{name}` do not match the parameter")));
        }
        moments.insert(name.to_string(), (m, v));
    }
    Ok(TrainState {
        model,
        optimizer: Adam::restore(header.adam, header.adam_steps, moments),
        config: header.train,
        epoch: header.epoch,
        step: header.step,
        rng: header.rng,
        best_metric: header.best_metric,
    })
}
