//! Binary checkpoint: magic, version, JSON header, little-endian f64 data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::{Branches, ModelConfig, Standardizer};
use super::network::Mcenet;

const MAGIC: &[u8; 8] = b"MCENETCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    branches: Branches,
    standardizer: Standardizer,
    /// Free-form tags such as the variant and the training datasets.
    meta: serde_json::Map<String, serde_json::Value>,
    params: Vec<(String, [usize; 2])>,
}

/// A network plus the metadata stored alongside it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Mcenet,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

pub fn encode_checkpoint(model: &Mcenet, meta: &serde_json::Map<String, serde_json::Value>) -> Vec<u8> {
    let header = Header {
        config: model.config.clone(),
        branches: model.branches,
        standardizer: model.standardizer,
        meta: meta.clone(),
        params: model
            .params
            .iter()
            .map(|(name, m)| (name.to_string(), [m.nrows(), m.ncols()]))
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in model.params.iter() {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().expect("4 bytes")))
}

pub fn decode_checkpoint(mut bytes: &[u8]) -> Result<Checkpoint> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut bytes)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = read_u32(&mut bytes)? as usize;
    let header: Header =
        serde_json::from_slice(take(&mut bytes, len)?).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut model = Mcenet::new(header.config, header.branches, header.standardizer)?;
    if header.params.len() != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{} stored parameters, architecture has {}",
            header.params.len(),
            model.params.len()
        )));
    }
    for (name, [r, c]) in &header.params {
        let id = model
            .params
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        let dst = model.params.get_mut(id);
        if dst.dim() != (*r, *c) {
            return Err(Error::Checkpoint(format!(
                "parameter {name} is {r}x{c}, architecture expects {:?}",
                dst.dim()
            )));
        }
        let raw = take(&mut bytes, 8 * r * c)?;
        for (v, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    Ok(Checkpoint {
        model,
        meta: header.meta,
    })
}

pub fn save_checkpoint(path: &Path, model: &Mcenet, meta: &serde_json::Map<String, serde_json::Value>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
