//! Model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      b"COHM"
//! version    u32 (= 1)
//! config     u64 length + JSON bytes
//! embeddings u64 length + embedding cache bytes (see `embedding`)
//! tensors    6 x (u64 count + count x f64): conv_w conv_b hidden_w hidden_b out_w out_b
//! checksum   SHA-256 of every preceding byte
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::model::{CoherenceModel, Params, TENSOR_NAMES};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"COHM";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

pub fn to_bytes(model: &CoherenceModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    let mut emb = Vec::new();
    model
        .embeddings
        .write_cache(&mut emb)
        .expect("writing to memory cannot fail");
    out.extend_from_slice(&(emb.len() as u64).to_le_bytes());
    out.extend_from_slice(&emb);
    for t in model.params.tensors() {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<CoherenceModel> {
    if bytes.len() < 8 {
        return Err(Error::CorruptCheckpoint("file is too short".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::CheckpointVersion("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CheckpointVersion(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    if bytes.len() < 8 + CHECKSUM_LEN {
        return Err(Error::CorruptCheckpoint("file is too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("checksum mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 8 };
    let n = cur.u64("config")?;
    let config: ModelConfig = serde_json::from_slice(cur.take(n, "config")?)
        .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
    let n = cur.u64("embeddings")?;
    let embeddings = EmbeddingMatrix::read_cache(cur.take(n, "embeddings")?)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let mut params = Params::zeros(&config);
    for (t, name) in params.tensors_mut().into_iter().zip(TENSOR_NAMES) {
        let n = cur.u64(name)?;
        if n != t.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{name} has {n} values, the config implies {}",
                t.len()
            )));
        }
        let raw = cur.take(n.checked_mul(8).ok_or_else(|| Error::CorruptCheckpoint(name.into()))?, name)?;
        for (v, b) in t.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if cur.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    let model = CoherenceModel {
        config,
        embeddings,
        params,
    };
    model
        .config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if model.embeddings.dim() != model.config.embed_dim {
        return Err(Error::CorruptCheckpoint("embedding dimension differs from the config".into()));
    }
    Ok(model)
}

pub fn save_model(model: &CoherenceModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<CoherenceModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
