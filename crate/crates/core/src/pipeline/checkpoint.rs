//! Checkpoint container: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header, then every array as raw little-endian `f64`s in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, TrainConfig};
use crate::backbone::{ModelConfig, ModelParams};
use crate::corpus::{EventSchema, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8; 8] = b"DOCEECK1";

/// Progress counters carried across resumed runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub best_dev_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub schema: EventSchema,
    pub train_config: Option<TrainConfig>,
    pub state: TrainState,
    pub optimizer: Option<Adam>,
}

#[derive(Serialize, Deserialize)]
struct ArrayInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    vocab: Vocabulary,
    vocab_hash: String,
    schema: EventSchema,
    schema_hash: String,
    train_config: Option<TrainConfig>,
    state: TrainState,
    /// Optimizer step count; moment arrays follow the parameters when present.
    optimizer_steps: Option<u64>,
    optimizer_learning_rate: Option<f64>,
    arrays: Vec<ArrayInfo>,
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let store = &ck.params.store;
    let header = Header {
        model: ck.params.config.clone(),
        vocab: ck.vocab.clone(),
        vocab_hash: ck.vocab.fingerprint(),
        schema: ck.schema.clone(),
        schema_hash: ck.schema.fingerprint(),
        train_config: ck.train_config.clone(),
        state: ck.state.clone(),
        optimizer_steps: ck.optimizer.as_ref().map(|a| a.steps),
        optimizer_learning_rate: ck.optimizer.as_ref().map(|a| a.learning_rate),
        arrays: store.iter().map(|(_, name, m)| ArrayInfo { name: name.to_string(), rows: m.rows(), cols: m.cols() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(16 + json.len() + 8 * store.num_scalars() * 3);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    let mut push = |m: &Matrix| m.data().iter().for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
    store.iter().for_each(|(_, _, m)| push(m));
    if let Some(adam) = &ck.optimizer {
        adam.m.iter().chain(&adam.v).for_each(&mut push);
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, checking its internal hashes and, when given, that it
/// was trained for `schema`.
pub fn load_checkpoint(path: &Path, schema: Option<&EventSchema>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.vocab.fingerprint() != header.vocab_hash {
        return Err(bad("vocabulary hash mismatch"));
    }
    if header.schema.fingerprint() != header.schema_hash {
        return Err(bad("schema hash mismatch"));
    }
    if let Some(s) = schema {
        if s.fingerprint() != header.schema_hash {
            return Err(bad("checkpoint was trained for a different event schema (schema hash mismatch)"));
        }
    }
    if header.model.vocab_size != header.vocab.len() {
        return Err(bad("model vocabulary size disagrees with the stored vocabulary"));
    }
    let mut pos = 16 + hlen;
    let mut read = |rows: usize, cols: usize| -> Result<Matrix> {
        let n = rows * cols * 8;
        let chunk = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated array data"))?;
        pos += n;
        let data = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Matrix::from_vec(rows, cols, data))
    };
    let mut named = Vec::with_capacity(header.arrays.len());
    for a in &header.arrays {
        named.push((a.name.clone(), read(a.rows, a.cols)?));
    }
    let optimizer = match header.optimizer_steps {
        None => None,
        Some(steps) => {
            let m = header.arrays.iter().map(|a| read(a.rows, a.cols)).collect::<Result<Vec<_>>>()?;
            let v = header.arrays.iter().map(|a| read(a.rows, a.cols)).collect::<Result<Vec<_>>>()?;
            let lr = header.optimizer_learning_rate.unwrap_or(1e-3);
            Some(Adam { learning_rate: lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, steps, m, v })
        }
    };
    if pos != bytes.len() {
        return Err(bad("trailing bytes after array data"));
    }
    let params = ModelParams::from_named(header.model, named)?;
    Ok(Checkpoint { params, vocab: header.vocab, schema: header.schema, train_config: header.train_config, state: header.state, optimizer })
}
