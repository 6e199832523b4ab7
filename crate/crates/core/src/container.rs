//! Binary tensor container used for checkpoints and cached features.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header
//! (free-form metadata plus a tensor index), then raw little-endian `f64`
//! data in index order. All integers are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPVOCTNS";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        self.tensors
            .remove(name)
            .ok_or_else(|| Error::Corrupt(format!("tensor `{name}` missing")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| Entry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let scalars: usize = self.tensors.values().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Version {
                expected: VERSION,
                found: version,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if header_len > body.len() {
            return Err(Error::Corrupt("header runs past end of file".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        let mut data = &body[header_len..];
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if data.len() < 8 * n {
                return Err(Error::Corrupt(format!("tensor `{}` is truncated", entry.name)));
            }
            let values = data[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            data = &data[8 * n..];
            if tensors
                .insert(entry.name.clone(), Tensor::new(entry.shape, values)?)
                .is_some()
            {
                return Err(Error::Corrupt(format!("tensor `{}` appears twice", entry.name)));
            }
        }
        if !data.is_empty() {
            return Err(Error::Corrupt(format!("{} trailing bytes", data.len())));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
