//! `DFACKPT1` checkpoints: magic, `u32` manifest length, `u32` reserved
//! (0), the JSON manifest, then every parameter as little-endian `f64` in
//! manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::DfAlign;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

const MAGIC: &[u8; 8] = b"DFACKPT1";
const HEADER_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub params: Vec<ParamEntry>,
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

pub fn save_checkpoint(path: &Path, model: &DfAlign, seed: u64) -> Result<()> {
    let manifest = CheckpointManifest {
        config_hash: model.cfg.hash(),
        seed,
        config: model.cfg.clone(),
        params: model
            .store
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Validation(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Validation("manifest exceeds u32".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + json.len() + 8 * model.store.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.store.iter() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model from the stored config and seed, then overwrites every
/// parameter with the stored values.
pub fn load_checkpoint(path: &Path) -> Result<(DfAlign, CheckpointManifest)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected DFACKPT1"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(parse_err(path, bytes.len(), "truncated header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (len, reserved) = (word(8), word(12));
    if reserved != 0 {
        return Err(parse_err(path, 12, format!("reserved field is {reserved}, expected 0")));
    }
    let body = HEADER_LEN + len;
    if bytes.len() < body {
        return Err(parse_err(path, bytes.len(), "truncated manifest"));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&bytes[HEADER_LEN..body])
        .map_err(|e| parse_err(path, HEADER_LEN + e.column().saturating_sub(1), e.to_string()))?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::Validation(format!(
            "{}: config hash {} does not match the stored config",
            path.display(),
            manifest.config_hash
        )));
    }
    let mut model = DfAlign::new(&manifest.config, manifest.seed)?;
    if model.store.len() != manifest.params.len() {
        return Err(Error::Validation(format!(
            "{}: {} stored parameters, model has {}",
            path.display(),
            manifest.params.len(),
            model.store.len()
        )));
    }
    let mut at = body;
    let ids: Vec<_> = model.store.ids().collect();
    for (id, entry) in ids.into_iter().zip(&manifest.params) {
        let p = model.store.get(id);
        if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
            return Err(Error::Validation(format!(
                "{}: stored parameter {} {:?} does not match model parameter {} {:?}",
                path.display(),
                entry.name,
                entry.shape,
                p.name,
                p.value.shape()
            )));
        }
        let count: usize = entry.shape.iter().product();
        let end = at + 8 * count;
        if bytes.len() < end {
            return Err(parse_err(path, bytes.len(), format!("truncated data for {}", entry.name)));
        }
        let data = bytes[at..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        model.store.set_value(id, DenseArray::new(entry.shape.clone(), data)?)?;
        at = end;
    }
    if at != bytes.len() {
        return Err(parse_err(path, at, "trailing bytes after parameters"));
    }
    Ok((model, manifest))
}
