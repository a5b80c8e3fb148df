//! Versioned JSON checkpoints.
//!
//! ```json
//! {"version":1,
//!  "dims":{"C":40,"H":64,"K":32,"M":64},
//!  "catalog":["A","B",...],
//!  "tensors":{"fwd.W_i":{"rows":64,"cols":160,"data":[...]}, ...},
//!  "meta":{"failure_rates":{"A":0.21,...},"split_seed":0,"validation_fraction":0.2}}
//! ```
//!
//! Tensors are keyed by the names from [`ModelParams::tensors`] and emitted in
//! sorted key order, so saving is a pure function of the values. Floats use
//! shortest round-trip formatting; load followed by save reproduces the bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::matrix::Matrix;
use super::model::{Dims, ModelParams};
use crate::error::{Error, Result};
use crate::transcript::CourseCatalog;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Training-time context carried alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Historical failure rate per course in the training corpus.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failure_rates: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub catalog: CourseCatalog,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    dims: Dims,
    catalog: CourseCatalog,
    tensors: BTreeMap<String, Matrix>,
    #[serde(default)]
    meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(params: ModelParams, catalog: CourseCatalog, meta: CheckpointMeta) -> Result<Self> {
        if params.dims.catalog != catalog.len() {
            return Err(Error::Checkpoint(format!(
                "model expects {} courses, catalog has {}",
                params.dims.catalog,
                catalog.len()
            )));
        }
        Ok(Checkpoint { params, catalog, meta })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let doc = CheckpointDoc {
            version: CHECKPOINT_VERSION,
            dims: self.params.dims,
            catalog: self.catalog.clone(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(n, m)| (n, m.clone()))
                .collect(),
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_vec(&doc)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut doc: CheckpointDoc = serde_json::from_slice(bytes)?;
        if doc.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", doc.version)));
        }
        doc.dims.validate()?;
        let mut params = ModelParams::zeros(doc.dims);
        for (name, slot) in params.tensors_mut() {
            let tensor = doc
                .tensors
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if tensor.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    tensor.shape(),
                    slot.shape()
                )));
            }
            // Matrix deserialization does not re-run the finiteness check.
            let tensor = Matrix::from_vec(tensor.rows(), tensor.cols(), tensor.data().to_vec())
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
            *slot = tensor;
        }
        if let Some(extra) = doc.tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Checkpoint::new(params, doc.catalog, doc.meta)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Short content hash identifying these exact weights.
    pub fn id(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_bytes()?);
        Ok(hex::encode(&digest[..8]))
    }
}
