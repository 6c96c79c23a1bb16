//! Binary checkpoint: `TIKTOCK1`, a little-endian u64 header length, a JSON
//! header (config, problems, tokenizer merges, parameter table), then every
//! parameter as little-endian f32 in table order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result, Trained, TrainingLog};
use crate::config::ExperimentConfig;
use crate::data::Problem;
use crate::models::Model;
use crate::nn::{Group, ParamStore, Tensor};
use crate::tokenizer::Tokenizer;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TIKTOCK1";

/// Refuses headers or tensors beyond this many bytes.
const MAX_HEADER: u64 = 64 << 20;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    group: Group,
    trainable: bool,
    decay: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: String,
    problems: BTreeMap<String, Problem>,
    majority: f64,
    merges: Option<Vec<(u32, u32)>>,
    params: Vec<ParamEntry>,
}

/// Serialized bytes of a trained model. The training log is not included.
pub fn checkpoint_bytes(t: &Trained) -> Vec<u8> {
    let mut params = Vec::new();
    let mut data = Vec::new();
    if let Some(m) = &t.model {
        for (_, p) in m.store.iter() {
            let (rows, cols) = p.value.shape();
            params.push(ParamEntry {
                name: p.name.clone(),
                rows,
                cols,
                group: p.group,
                trainable: p.trainable,
                decay: p.decay,
            });
            data.extend(p.value.data.iter().flat_map(|x| x.to_le_bytes()));
        }
    }
    let header = Header {
        config: t.cfg.to_kv_string(),
        problems: t.problems.clone(),
        majority: t.majority,
        merges: t.model.as_ref().map(|m| m.tokenizer.merges().to_vec()),
        params,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Trained> {
    let bad = |m: &str| PipelineError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing TIKTOCK1 magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    if len > MAX_HEADER || len as usize > bytes.len() - 16 {
        return Err(bad("header length out of range"));
    }
    let end = 16 + len as usize;
    let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| bad(&format!("header: {e}")))?;
    let cfg = ExperimentConfig::parse(&header.config, &[])?;
    let mut store = ParamStore::new();
    let mut at = end;
    for p in &header.params {
        let n = p.rows.checked_mul(p.cols).ok_or_else(|| bad("tensor size overflow"))?;
        let nbytes = n.checked_mul(4).ok_or_else(|| bad("tensor size overflow"))?;
        if bytes.len() - at < nbytes {
            return Err(bad(&format!("truncated data for {}", p.name)));
        }
        if store.id(&p.name).is_some() {
            return Err(bad(&format!("duplicate parameter {}", p.name)));
        }
        let vals: Vec<f32> =
            bytes[at..at + nbytes].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        at += nbytes;
        let id = store.add(p.name.clone(), Tensor::from_vec(p.rows, p.cols, vals), p.group, p.decay);
        store.set_trainable(id, p.trainable);
    }
    if at != bytes.len() {
        return Err(bad("trailing bytes after parameter data"));
    }
    let model = match header.merges {
        Some(merges) if !cfg.model.is_baseline() => {
            let tok = Tokenizer::from_merges(merges)?;
            Some(Model::from_parts(&cfg, &header.problems, tok, store)?)
        }
        _ => None,
    };
    Ok(Trained { cfg, problems: header.problems, model, majority: header.majority, log: TrainingLog::default() })
}

pub fn save_checkpoint(path: &Path, t: &Trained) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(t)).map_err(|source| PipelineError::Io { path: path.into(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Trained> {
    let bytes = std::fs::read(path).map_err(|source| PipelineError::Io { path: path.into(), source })?;
    parse_checkpoint(&bytes)
}
