//! Checkpoint directories: `manifest.json` + `tensors.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::scalar::{DType, Scalar};
use super::tensor::{ParamSet, Tensor};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const TENSORS: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// What produced the checkpoint, e.g. `"speaker_listener"` or `"lm"`.
    pub kind: String,
    pub step: u64,
    /// Exact configuration (including seed) that produced the parameters.
    pub config: Value,
    /// Free-form architecture notes (init scheme, layer choices).
    #[serde(default)]
    pub meta: Value,
    pub tensors: Vec<TensorEntry>,
}

/// Named parameters plus the manifest fields that travel with them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub kind: String,
    pub step: u64,
    pub config: Value,
    pub meta: Value,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(kind: impl Into<String>, step: u64, config: Value, params: ParamSet<T>) -> Self {
        Checkpoint {
            kind: kind.into(),
            step,
            config,
            meta: Value::Null,
            params,
        }
    }

    pub fn with_meta(mut self, meta: Value) -> Self {
        self.meta = meta;
        self
    }

    /// Serialises to the two in-memory buffers written by [`save`](Self::save).
    pub fn to_bytes(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut blob = Vec::new();
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            let bytes = T::to_le_bytes_vec(t.data());
            tensors.push(TensorEntry {
                name: name.to_string(),
                dtype: T::DTYPE,
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
                length: bytes.len() as u64,
            });
            blob.extend_from_slice(&bytes);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            step: self.step,
            config: self.config.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        Ok((json, blob))
    }

    pub fn from_bytes(manifest: &[u8], blob: &[u8], origin: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_slice(manifest)
            .map_err(|e| Error::parse(origin, format!("bad manifest: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                origin,
                format!("unsupported format version {}", m.format_version),
            ));
        }
        let mut params = ParamSet::new();
        for e in &m.tensors {
            if e.dtype != T::DTYPE {
                return Err(Error::parse(
                    origin,
                    format!(
                        "tensor `{}` is {:?}, expected {:?}",
                        e.name,
                        e.dtype,
                        T::DTYPE
                    ),
                ));
            }
            let numel: usize = e.shape.iter().product();
            if e.length as usize != numel * e.dtype.size() {
                return Err(Error::parse(
                    origin,
                    format!(
                        "tensor `{}` length {} does not match shape {:?}",
                        e.name, e.length, e.shape
                    ),
                ));
            }
            let end = e
                .offset
                .checked_add(e.length)
                .filter(|&end| end as usize <= blob.len());
            let Some(end) = end else {
                return Err(Error::parse(
                    origin,
                    format!(
                        "tensor `{}` runs past end of {TENSORS} (truncated?)",
                        e.name
                    ),
                ));
            };
            let data = T::from_le_bytes_slice(&blob[e.offset as usize..end as usize]);
            params.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
        }
        Ok(Checkpoint {
            kind: m.kind,
            step: m.step,
            config: m.config,
            meta: m.meta,
            params,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (json, blob) = self.to_bytes()?;
        let mp = dir.join(MANIFEST);
        fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
        let tp = dir.join(TENSORS);
        fs::write(&tp, blob).map_err(|e| Error::io(&tp, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mp = dir.join(MANIFEST);
        let json = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        let tp = dir.join(TENSORS);
        let blob = fs::read(&tp).map_err(|e| Error::io(&tp, e))?;
        Self::from_bytes(&json, &blob, &dir.display().to_string())
    }
}
