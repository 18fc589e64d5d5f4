//! Flat binary tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DASFCKPT"            8-byte magic
//! u32                    format version (1)
//! u64                    manifest length in bytes
//! manifest               UTF-8 JSON: {"meta": any, "tensors": [entry, ...]}
//! payload                concatenated little-endian f32 tensor data
//! ```
//!
//! Each manifest entry is `{section, name, dtype, shape, offset, bytes, crc32}`
//! where `offset` is relative to the start of the payload. Model weights and
//! batch-norm running statistics live in section `params`; optimizer moments
//! in `adam_m` / `adam_v`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Real, Tensor};

const MAGIC: &[u8; 8] = b"DASFCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    section: String,
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
    crc32: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub section: String,
    pub name: String,
    pub tensor: Tensor<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn new(meta: serde_json::Value) -> Self {
        Archive {
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push<T: Real>(&mut self, section: &str, name: &str, tensor: &Tensor<T>) {
        self.entries.push(ArchiveEntry {
            section: section.to_string(),
            name: name.to_string(),
            tensor: tensor.cast(),
        });
    }

    pub fn get(&self, section: &str, name: &str) -> Option<&Tensor<f32>> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.name == name)
            .map(|e| &e.tensor)
    }

    pub fn section<'a>(&'a self, section: &'a str) -> impl Iterator<Item = &'a ArchiveEntry> + 'a {
        self.entries.iter().filter(move |e| e.section == section)
    }

    /// Every tensor of `store` (trainable or not) into `section`.
    pub fn push_store<T: Real>(&mut self, section: &str, store: &ParamStore<T>) {
        for id in store.ids() {
            self.push(section, store.name(id), store.value(id));
        }
    }

    /// Overwrite the values of `store` from `section`; every store entry must be present.
    pub fn load_store<T: Real>(&self, section: &str, store: &mut ParamStore<T>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let t = self
                .get(section, &name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{section}/{name}`")))?;
            if t.shape() != store.value(id).shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    store.value(id).shape()
                )));
            }
            *store.value_mut(id) = t.cast();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut tensors = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let start = payload.len();
            for v in e.tensor.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            let bytes = &payload[start..];
            tensors.push(ManifestEntry {
                section: e.section.clone(),
                name: e.name.clone(),
                dtype: "f32".into(),
                shape: e.tensor.shape().to_vec(),
                offset: start as u64,
                bytes: bytes.len() as u64,
                crc32: crc32fast::hash(bytes),
            });
        }
        let manifest = serde_json::to_vec(&Manifest {
            meta: self.meta.clone(),
            tensors,
        })
        .expect("manifest serializes");
        let mut out = Vec::with_capacity(20 + manifest.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if buf.len() < 20 || &buf[..8] != MAGIC {
            return Err(bad("not a checkpoint archive (bad magic)".into()));
        }
        let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mlen = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
        let mend = 20usize
            .checked_add(mlen)
            .filter(|&e| e <= buf.len())
            .ok_or_else(|| bad("truncated manifest".into()))?;
        let manifest: Manifest =
            serde_json::from_slice(&buf[20..mend]).map_err(|e| bad(format!("manifest: {e}")))?;
        let payload = &buf[mend..];
        let mut entries = Vec::with_capacity(manifest.tensors.len());
        for m in manifest.tensors {
            if m.dtype != "f32" {
                return Err(bad(format!("`{}`: unsupported dtype {}", m.name, m.dtype)));
            }
            let n: usize = m.shape.iter().product();
            if m.bytes as usize != 4 * n {
                return Err(bad(format!("`{}`: byte length does not match shape", m.name)));
            }
            let (s, e) = (m.offset as usize, (m.offset + m.bytes) as usize);
            if e > payload.len() || s > e {
                return Err(bad(format!("`{}`: payload truncated", m.name)));
            }
            let bytes = &payload[s..e];
            if crc32fast::hash(bytes) != m.crc32 {
                return Err(bad(format!("`{}`: checksum mismatch", m.name)));
            }
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(ArchiveEntry {
                section: m.section,
                name: m.name,
                tensor: Tensor::from_vec(&m.shape, data)?,
            });
        }
        Ok(Archive {
            meta: manifest.meta,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Archive::from_bytes(&buf)
    }
}
