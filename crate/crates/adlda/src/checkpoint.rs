//! Binary checkpoints.
//!
//! ```text
//! "ADLDACK1"
//! u32 manifest length, manifest JSON
//! u32 parameter count
//! per parameter: u16 name length, name, u8 rank, u32 dims…, f32 data
//! ```
//!
//! Integers and floats are little-endian. Trailing bytes are rejected.

use adlda_core::model::{AdldaModel, ModelConfig};
use adlda_core::Tensor;
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"ADLDACK1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint does not match the architecture: {0}")]
    Architecture(String),
}

/// What the checkpoint was trained as.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub runid: String,
    pub seed: u64,
    pub lambda: f64,
    /// Training epochs completed.
    pub epoch: usize,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_model(manifest: CheckpointManifest, model: &AdldaModel<f32>) -> Self {
        Checkpoint {
            manifest,
            params: model.params().iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.rank() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic").map_err(|_| CheckpointError::Magic)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let len = r.u32("manifest length")? as usize;
        let manifest: CheckpointManifest = serde_json::from_slice(r.take(len, "manifest")?)
            .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
            let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
                .map_err(|_| CheckpointError::Manifest("parameter name is not UTF-8".into()))?;
            let rank = r.take(1, "rank")?[0] as usize;
            let shape = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated("data"))?, "data")?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let tensor = Tensor::new(&shape, data).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
            params.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }
        Ok(Checkpoint { manifest, params })
    }

    /// The full model, domain head included.
    pub fn model(&self) -> Result<AdldaModel<f32>, CheckpointError> {
        let mut model = AdldaModel::new(self.manifest.model.clone(), 0).map_err(|e| CheckpointError::Architecture(e.to_string()))?;
        model
            .load_params(self.params.iter().cloned())
            .map_err(|e| CheckpointError::Architecture(e.to_string()))?;
        Ok(model)
    }

    /// The class path only; domain-head tensors are skipped, never built.
    pub fn class_model(&self) -> Result<AdldaModel<f32>, CheckpointError> {
        let config = ModelConfig {
            domain_head: None,
            ..self.manifest.model.clone()
        };
        let mut model = AdldaModel::new(config, 0).map_err(|e| CheckpointError::Architecture(e.to_string()))?;
        let wanted: Vec<_> = self.params.iter().filter(|(name, _)| model.params().find(name).is_some()).cloned().collect();
        model.load_params(wanted).map_err(|e| CheckpointError::Architecture(e.to_string()))?;
        Ok(model)
    }

    /// Same checkpoint with the domain head's tensors removed.
    pub fn strip_domain_head(&self) -> Result<Self, CheckpointError> {
        let model = self.class_model()?;
        Ok(Checkpoint {
            manifest: CheckpointManifest {
                model: model.config().clone(),
                ..self.manifest.clone()
            },
            params: self.params.iter().filter(|(n, _)| model.params().find(n).is_some()).cloned().collect(),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N, what)?.try_into().unwrap())
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }
}
