//! Flat parameter vectors and their canonical byte form.

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ParamError {
    #[error("parameter vector is empty")]
    Empty,
    #[error("non-finite parameter at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed parameter bytes: {0}")]
    Malformed(String),
}

/// All model parameters laid out as one vector. Non-empty and finite.
#[derive(Clone, PartialEq, Debug)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ParamError> {
        if values.is_empty() {
            return Err(ParamError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ParamError::NonFinite { index, value });
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Result<Self, ParamError> {
        Self::new(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn check_same_len(&self, other: &ParamVector) -> Result<(), ParamError> {
        if self.len() != other.len() {
            return Err(ParamError::LengthMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Little-endian u64 count followed by little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.0.len());
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ParamError> {
        if bytes.len() < 8 {
            return Err(ParamError::Malformed("missing length prefix".into()));
        }
        let (head, body) = bytes.split_at(8);
        let count = u64::from_le_bytes(head.try_into().unwrap()) as usize;
        if body.len() != count.saturating_mul(8) {
            return Err(ParamError::Malformed(format!(
                "expected {} value bytes, found {}",
                count * 8,
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(values)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, ParamError> {
        let bytes = hex::decode(s).map_err(|e| ParamError::Malformed(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    pub fn content_digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Parameters as carried in messages and snapshot files: inline hex of the
/// canonical bytes, or a path (relative to a shared store) to a file holding
/// those bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamsPayload {
    Inline { hex: String },
    ByReference { path: String },
}

impl ParamsPayload {
    pub fn inline(params: &ParamVector) -> Self {
        ParamsPayload::Inline {
            hex: params.to_hex(),
        }
    }

    /// Writes the canonical bytes to `store/<name>.bin` and refers to them.
    pub fn store(params: &ParamVector, store: &Path, name: &str) -> std::io::Result<Self> {
        let file = format!("{name}.bin");
        std::fs::create_dir_all(store)?;
        std::fs::write(store.join(&file), params.to_bytes())?;
        Ok(ParamsPayload::ByReference { path: file })
    }

    /// Decodes the parameters; references resolve against `store`.
    pub fn resolve(&self, store: Option<&Path>) -> Result<ParamVector, ParamError> {
        match self {
            ParamsPayload::Inline { hex } => ParamVector::from_hex(hex),
            ParamsPayload::ByReference { path } => {
                let base = store.ok_or_else(|| {
                    ParamError::Malformed(format!("no model store to resolve {path}"))
                })?;
                let rel = Path::new(path);
                if rel.is_absolute() || rel.components().any(|c| c.as_os_str() == "..") {
                    return Err(ParamError::Malformed(format!(
                        "reference {path} escapes the model store"
                    )));
                }
                let bytes = std::fs::read(base.join(rel))
                    .map_err(|e| ParamError::Malformed(format!("{path}: {e}")))?;
                ParamVector::from_bytes(&bytes)
            }
        }
    }
}
