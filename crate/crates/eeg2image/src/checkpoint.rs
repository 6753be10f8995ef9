//! Shared checkpoint format for every trainable model.
//!
//! A checkpoint directory contains `manifest.json` describing named entries
//! (parameters and buffers) with shapes and byte offsets, plus `params.bin`
//! holding the concatenated little-endian f64 payloads. The manifest echoes
//! the training config and carries a SHA-256 of the payload so frozen models
//! can be hash-verified.

use crate::error::{Error, Result};
use crate::nn::NamedParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub len: u64,
}

#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct Manifest {
    pub magic: String,
    pub version: u32,
    pub dtype: String,
    pub params: Vec<ManifestEntry>,
    pub buffers: Vec<ManifestEntry>,
    pub config: serde_json::Value,
    pub sha256: String,
    #[serde(default)]
    pub frozen: bool,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub payload: Vec<u8>,
}

fn encode(values: &[f64], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Hash of a model's current parameter values, for frozen-module checks.
pub fn params_hash(params: &NamedParams) -> String {
    let mut bytes = Vec::new();
    for (name, p) in params {
        bytes.extend_from_slice(name.as_bytes());
        encode(&p.data(), &mut bytes);
    }
    sha256_hex(&bytes)
}

pub fn save(
    dir: &Path,
    params: &NamedParams,
    buffers: &NamedParams,
    config: serde_json::Value,
    frozen: bool,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut payload = Vec::new();
    let mut entries = |list: &NamedParams| -> Vec<ManifestEntry> {
        list.iter()
            .map(|(name, t)| {
                let offset = payload.len() as u64;
                encode(&t.data(), &mut payload);
                ManifestEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                    len: (t.numel() * 8) as u64,
                }
            })
            .collect()
    };
    let param_entries = entries(params);
    let buffer_entries = entries(buffers);
    let manifest = Manifest {
        magic: "CKPT".into(),
        version: 1,
        dtype: "f64le".into(),
        params: param_entries,
        buffers: buffer_entries,
        config,
        sha256: sha256_hex(&payload),
        frozen,
    };
    fs::write(dir.join("params.bin"), &payload)?;
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

pub fn read(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest =
        serde_json::from_slice(&fs::read(dir.join("manifest.json")).map_err(|e| {
            Error::Checkpoint(format!("{}: {e}", dir.join("manifest.json").display()))
        })?)?;
    if manifest.magic != "CKPT" || manifest.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint magic/version {}/{}",
            manifest.magic, manifest.version
        )));
    }
    if manifest.dtype != "f64le" {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let payload = fs::read(dir.join("params.bin"))?;
    let got = sha256_hex(&payload);
    if got != manifest.sha256 {
        return Err(Error::Checkpoint(format!(
            "payload hash mismatch: manifest {} vs actual {got}",
            manifest.sha256
        )));
    }
    Ok(Checkpoint { manifest, payload })
}

impl Checkpoint {
    fn load_list(&self, entries: &[ManifestEntry], targets: &NamedParams) -> Result<()> {
        if entries.len() != targets.len() {
            return Err(Error::Checkpoint(format!(
                "entry count mismatch: checkpoint has {}, model has {}",
                entries.len(),
                targets.len()
            )));
        }
        for (entry, (name, tensor)) in entries.iter().zip(targets) {
            if &entry.name != name {
                return Err(Error::Checkpoint(format!(
                    "entry order mismatch: '{}' vs model '{name}'",
                    entry.name
                )));
            }
            if entry.shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for '{name}': {:?} vs {:?}",
                    entry.shape,
                    tensor.shape()
                )));
            }
            let start = entry.offset as usize;
            let end = start + entry.len as usize;
            if end > self.payload.len() {
                return Err(Error::Checkpoint(format!(
                    "entry '{name}' extends past payload ({end} > {})",
                    self.payload.len()
                )));
            }
            tensor.set_data(&decode(&self.payload[start..end]))?;
        }
        Ok(())
    }

    /// Copy stored values into a freshly constructed model's tensors.
    pub fn load_into(&self, params: &NamedParams, buffers: &NamedParams) -> Result<()> {
        self.load_list(&self.manifest.params, params)?;
        self.load_list(&self.manifest.buffers, buffers)
    }
}
