//! Binary checkpoint container shared by models and blenders.
//!
//! Layout: `b"MMSV"`, u16 version, u32 header length, JSON header, then the
//! parameter values as little-endian f32 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelVariant};
use crate::numerics::{DenseMatrix, ParamStore};

pub const MAGIC: &[u8; 4] = b"MMSV";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Model,
    Blender,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub variant: ModelVariant,
    pub dims: ModelDims,
    pub params: Vec<ParamShape>,
    /// Echo of whatever configuration produced the weights.
    #[serde(default)]
    pub config: serde_json::Value,
    pub step: u64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn new(
        kind: CheckpointKind,
        variant: ModelVariant,
        dims: ModelDims,
        store: ParamStore,
        config: serde_json::Value,
        step: u64,
    ) -> Self {
        let params = store
            .iter()
            .map(|(name, p)| ParamShape {
                name: name.to_string(),
                rows: p.value.rows(),
                cols: p.value.cols(),
            })
            .collect();
        Checkpoint {
            header: CheckpointHeader {
                kind,
                variant,
                dims,
                params,
                config,
                step,
            },
            store,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let header_len = u32::try_from(header.len())
            .map_err(|_| Error::Checkpoint("header too large".into()))?;
        let mut out = Vec::with_capacity(10 + header.len() + 4 * self.store.num_scalars());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for shape in &self.header.params {
            let p = self.store.get(&shape.name)?;
            for &v in p.value.as_slice() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let header_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let body = &bytes[10..];
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload = &body[header_len..];
        let expected: usize = header.params.iter().map(|s| s.rows * s.cols).sum();
        if payload.len() != 4 * expected {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header describes {}",
                payload.len(),
                4 * expected
            )));
        }
        let mut store = ParamStore::new();
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
        for shape in &header.params {
            let data: Vec<f64> = values.by_ref().take(shape.rows * shape.cols).collect();
            let m = DenseMatrix::from_vec(shape.rows, shape.cols, data)
                .map_err(|e| Error::Checkpoint(format!("{}: {e}", shape.name)))?;
            store.insert(shape.name.clone(), m)?;
        }
        Ok(Checkpoint { header, store })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the header describes the expected kind and variant.
    pub fn expect(&self, kind: CheckpointKind, variant: Option<ModelVariant>) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.header.kind
            )));
        }
        if let Some(v) = variant {
            if v != self.header.variant {
                return Err(Error::Checkpoint(format!(
                    "variant mismatch: file holds {}, requested {}",
                    self.header.variant.name(),
                    v.name()
                )));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
