//! Binary model checkpoints.
//!
//! Little-endian layout: magic `CTCK`, `u32` version, `u64` length of a JSON
//! header (model config, seed, stage), the header, `u32` parameter count,
//! then per parameter: `u32` name length, UTF-8 name, `u32` rows, `u32` cols
//! and `rows * cols` `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use castemp_core::model::{Model, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::create_file;

const MAGIC: &[u8; 4] = b"CTCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub seed: u64,
    /// Last stage trained into these parameters (`pop` or `con`).
    pub stage: String,
    pub best_epoch: usize,
}

pub fn save_checkpoint(path: &Path, model: &Model, stage: &str, best_epoch: usize) -> Result<()> {
    let header = CheckpointHeader { config: model.config, seed: model.seed, stage: stage.to_string(), best_epoch };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut buf = Vec::with_capacity(json.len() + 8 * model.params.num_scalars() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut w = create_file(path)?;
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(at..at + n).ok_or_else(|| Error::format(path, "truncated checkpoint"))?;
        at += n;
        Ok(s)
    };
    let u32_of = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
    if take(4)? != MAGIC {
        return Err(Error::format(path, "not a CTCK checkpoint"));
    }
    let version = u32_of(take(4)?);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let json_len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(json_len)?).map_err(|e| Error::format(path, e.to_string()))?;
    let mut model = Model::uninitialized(header.config)?;
    model.seed = header.seed;
    let count = u32_of(take(4)?) as usize;
    if count != model.params.len() {
        return Err(Error::format(path, format!("{count} parameters stored, model has {}", model.params.len())));
    }
    let mut seen = std::collections::HashSet::with_capacity(count);
    for _ in 0..count {
        let name_len = u32_of(take(4)?) as usize;
        let name = std::str::from_utf8(take(name_len)?).map_err(|_| Error::format(path, "parameter name is not UTF-8"))?.to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format(path, format!("parameter `{name}` stored twice")));
        }
        let rows = u32_of(take(4)?) as usize;
        let cols = u32_of(take(4)?) as usize;
        let raw = take(8 * rows * cols)?;
        let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        model.params.set(&name, rows, cols, &values)?;
    }
    if at != bytes.len() {
        return Err(Error::format(path, "trailing bytes after the last parameter"));
    }
    Ok((model, header))
}
