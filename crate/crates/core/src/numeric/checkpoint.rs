//! Named parameter store and its binary checkpoint format.
//!
//! Layout: 5-byte magic `STCK1`, u32 LE manifest length, JSON manifest
//! (array of {name, rows, cols, byte_offset} sorted by name), then raw
//! little-endian f64 payload. `byte_offset` is relative to the start of
//! the float payload. Writing the same store twice yields identical bytes.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"STCK1";

/// All trainable tensors of a model, keyed by name. BTreeMap keeps
/// iteration order deterministic, which fixes RNG consumption order at
/// init and byte order on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, DenseMatrix>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    rows: usize,
    cols: usize,
    byte_offset: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, m: DenseMatrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name:?}")));
        }
        self.params.insert(name, m);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&DenseMatrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut DenseMatrix> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    /// Replace an existing tensor, keeping its shape.
    pub fn set(&mut self, name: &str, m: DenseMatrix) -> Result<()> {
        let cur = self.get(name)?;
        if cur.shape() != m.shape() {
            return Err(Error::shape("param set", cur.shape(), m.shape()));
        }
        self.params.insert(name.to_string(), m);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseMatrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DenseMatrix)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(DenseMatrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(DenseMatrix::is_finite)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for (name, m) in &self.params {
            manifest.push(ManifestEntry {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
                byte_offset: offset,
            });
            offset += (m.len() * 8) as u64;
        }
        let manifest_json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(5 + 4 + manifest_json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest_json);
        for m in self.params.values() {
            for &v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 || &bytes[..5] != MAGIC {
            return Err(Error::Format("not a STCK1 checkpoint".into()));
        }
        let mlen = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let payload_start = 9 + mlen;
        if bytes.len() < payload_start {
            return Err(Error::Format("checkpoint manifest truncated".into()));
        }
        let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[9..payload_start])
            .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
        let payload = &bytes[payload_start..];
        let mut store = ParamStore::new();
        for entry in manifest {
            let n = entry.rows * entry.cols;
            let start = entry.byte_offset as usize;
            let end = start + n * 8;
            if end > payload.len() {
                return Err(Error::Format(format!(
                    "checkpoint payload truncated for {:?}",
                    entry.name
                )));
            }
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let m = DenseMatrix::from_vec(entry.rows, entry.cols, data)?;
            store.insert(entry.name, m)?;
        }
        Ok(store)
    }
}
