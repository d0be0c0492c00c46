//! Named parameter storage and the checkpoint file format.
//!
//! A checkpoint is `HSEDCKPT`, a little-endian `u32` version, a `u64` manifest
//! length, the JSON manifest (model config, config hash, parameter names and
//! shapes), then every parameter's values as little-endian `f64` in manifest
//! order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::tape::Tensor;

const MAGIC: &[u8; 8] = b"HSEDCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = tensor,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(tensor);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.position(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape == b.shape)
    }

    /// SHA-256 over names, shapes and exact bit patterns, optionally
    /// restricted to parameters whose name passes `filter`.
    pub fn hash_filtered(&self, filter: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter().filter(|(n, _)| filter(n)) {
            h.update(name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in &t.data {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn hash(&self) -> String {
        self.hash_filtered(|_| true)
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    config: serde_json::Value,
    params: Vec<ManifestEntry>,
}

pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(json))
}

pub fn encode_checkpoint<C: Serialize>(config: &C, params: &ParamStore) -> Vec<u8> {
    let manifest = Manifest {
        config_hash: config_hash(config),
        config: serde_json::to_value(config).expect("config serializes"),
        params: params
            .iter()
            .map(|(n, t)| ManifestEntry {
                name: n.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * params.n_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint<C: for<'de> Deserialize<'de> + Serialize>(
    bytes: &[u8],
) -> Result<(C, ParamStore)> {
    let bad = |msg: &str| Error::Data(format!("invalid checkpoint: {msg}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic header"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20 + len)
        .ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(body).map_err(|e| bad(&format!("manifest: {e}")))?;
    let config: C =
        serde_json::from_value(manifest.config).map_err(|e| bad(&format!("model config: {e}")))?;
    if config_hash(&config) != manifest.config_hash {
        return Err(bad("config hash mismatch"));
    }
    let mut params = ParamStore::new();
    let mut pos = 20 + len;
    for entry in manifest.params {
        let n: usize = entry.shape.iter().product();
        let chunk = bytes
            .get(pos..pos + 8 * n)
            .ok_or_else(|| bad("truncated parameter data"))?;
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(entry.name, Tensor::new(entry.shape, data));
        pos += 8 * n;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((config, params))
}

pub fn save_checkpoint<C: Serialize>(path: &Path, config: &C, params: &ParamStore) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<C: for<'de> Deserialize<'de> + Serialize>(
    path: &Path,
) -> Result<(C, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
