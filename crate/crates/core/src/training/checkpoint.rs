//! Binary checkpoint format.
//!
//! ```text
//! "DECI"  u32 version
//! u32 vocab_size, embed_dim, hidden_dim, n_labels, n_experts
//! f32 arrays, row-major: embedding, enc_proj, enc_bias, label_queries,
//!     expert weights 1..F, expert biases 1..F, gate_w, gate_bias
//! u32 byte length, then a UTF-8 JSON blob (vocabulary, labels, settings)
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelSpace, Vocabulary};
use crate::model::{GateMode, ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"DECI";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(
        "checkpoint format version {found} is not supported (this build reads version {supported})"
    )]
    Version { found: u32, supported: u32 },
}

/// Parameters plus everything needed to tokenize and label new input.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub labels: LabelSpace,
    pub max_len: usize,
    /// Free-form echo of the run configuration.
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    vocabulary: Vec<String>,
    labels: Vec<String>,
    max_len: usize,
    gate_mode: GateMode,
    config: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn dim(v: usize, what: &str) -> Result<u32, CheckpointError> {
    u32::try_from(v)
        .map_err(|_| CheckpointError::Format(format!("{what} {v} does not fit in 32 bits")))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let c = self.params.config;
        if self.vocab.len() != c.vocab_size {
            return Err(CheckpointError::Format(format!(
                "vocabulary has {} entries, model expects {}",
                self.vocab.len(),
                c.vocab_size
            )));
        }
        if self.labels.len() != c.n_labels {
            return Err(CheckpointError::Format(format!(
                "label space has {} entries, model expects {}",
                self.labels.len(),
                c.n_labels
            )));
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        for (v, name) in [
            (c.vocab_size, "vocab_size"),
            (c.embed_dim, "embed_dim"),
            (c.hidden_dim, "hidden_dim"),
            (c.n_labels, "n_labels"),
            (c.n_experts, "n_experts"),
        ] {
            put_u32(&mut out, dim(v, name)?);
        }
        for seg in self.params.segments() {
            for &v in seg {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let meta = Meta {
            vocabulary: self.vocab.words().to_vec(),
            labels: self.labels.labels().to_vec(),
            max_len: self.max_len,
            gate_mode: c.gate_mode,
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| CheckpointError::Format(e.to_string()))?;
        put_u32(&mut out, dim(json.len(), "metadata length")?);
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [vocab_size, embed_dim, hidden_dim, n_labels, n_experts] = dims;
        // gate mode lives in the trailing metadata; read arrays first with a
        // placeholder and patch it afterwards
        let config = ModelConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            n_labels,
            n_experts,
            gate_mode: GateMode::default(),
        };
        config
            .validate()
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let total: usize = [
            vocab_size.checked_mul(embed_dim),
            embed_dim.checked_mul(hidden_dim),
            Some(hidden_dim),
            n_labels.checked_mul(hidden_dim),
            n_labels
                .checked_mul(hidden_dim)
                .and_then(|x| x.checked_mul(n_experts)),
            n_labels.checked_mul(n_experts),
            hidden_dim.checked_mul(n_experts),
            Some(n_experts),
        ]
        .into_iter()
        .try_fold(0usize, |acc, x| x.and_then(|x| acc.checked_add(x)))
        .ok_or_else(|| CheckpointError::Format("dimensions overflow".into()))?;
        if total.checked_mul(4).is_none_or(|b| b > r.remaining()) {
            return Err(CheckpointError::Format("truncated parameter block".into()));
        }

        let mut params = ModelParams::zeros(config);
        for seg in params.segments_mut() {
            for v in seg.iter_mut() {
                *v = f64::from(r.f32()?);
            }
        }
        let len = r.u32()? as usize;
        let json = r.take(len)?;
        if r.remaining() != 0 {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes after metadata",
                r.remaining()
            )));
        }
        let meta: Meta = serde_json::from_slice(json)
            .map_err(|e| CheckpointError::Format(format!("metadata: {e}")))?;
        params.config.gate_mode = meta.gate_mode;
        params
            .validate()
            .map_err(|e| CheckpointError::Format(e.to_string()))?;

        let vocab = Vocabulary::from_ordered(meta.vocabulary);
        if vocab.len() != vocab_size {
            return Err(CheckpointError::Format(format!(
                "metadata vocabulary has {} entries, header says {vocab_size}",
                vocab.len()
            )));
        }
        let labels =
            LabelSpace::new(meta.labels).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if labels.len() != n_labels {
            return Err(CheckpointError::Format(format!(
                "metadata lists {} labels, header says {n_labels}",
                labels.len()
            )));
        }
        Ok(Self {
            params,
            vocab,
            labels,
            max_len: meta.max_len,
            config: meta.config,
        })
    }

    /// Writes to a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        crate::fsutil::write_atomic(path, &bytes).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if n > self.remaining() {
            return Err(CheckpointError::Format(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, CheckpointError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
