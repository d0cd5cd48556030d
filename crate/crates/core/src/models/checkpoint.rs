//! Checkpoint directory: `model.bin` (binary parameter archive) plus
//! `manifest.json` (spec, domain, BN statistics, seeds and digests).
//!
//! Archive layout, little-endian:
//! `b"DFDGCKPT"`, `u32` version, `u64` parameter count, `u64` running-stat
//! count, parameters as `f64`, running means/variances as `f64` (layer
//! order, mean before variance), then the SHA-256 of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::Classifier;
use super::spec::ClassifierSpec;
use super::stats::BnStats;
use crate::error::{Error, Result};
use crate::io;

const MAGIC: &[u8; 8] = b"DFDGCKPT";
const VERSION: u32 = 1;
pub(crate) const ARCHIVE: &str = "model.bin";
pub(crate) const MANIFEST: &str = "manifest.json";

/// Caller-supplied metadata stamped into the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub role: String,
    pub domain_id: Option<usize>,
    pub training_seed: u64,
    pub stage_digest: Option<String>,
    pub config_digest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub spec: ClassifierSpec,
    pub role: String,
    pub domain_id: Option<usize>,
    pub bn_layer_ids: Vec<usize>,
    pub training_seed: u64,
    pub param_hash: String,
    pub stage_digest: Option<String>,
    pub config_digest: Option<String>,
    pub bn_stats: BnStats,
}

pub fn save_checkpoint(model: &Classifier, meta: &CheckpointMeta, dir: &Path) -> Result<()> {
    let running = model.running();
    let running_len: usize = running.iter().map(|(m, v)| m.len() + v.len()).sum();
    let mut bytes = Vec::with_capacity(32 + 8 * (model.params().len() + running_len) + 32);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(model.params().len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(running_len as u64).to_le_bytes());
    for p in model.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    for (m, v) in running {
        for x in m.iter().chain(v) {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    io::write_atomic(&dir.join(ARCHIVE), &bytes)?;

    let stats = model.stored_bn_stats();
    let manifest = CheckpointManifest {
        spec: model.spec().clone(),
        role: meta.role.clone(),
        domain_id: meta.domain_id,
        bn_layer_ids: stats.layer_ids(),
        training_seed: meta.training_seed,
        param_hash: model.param_hash(),
        stage_digest: meta.stage_digest.clone(),
        config_digest: meta.config_digest.clone(),
        bn_stats: stats,
    };
    io::write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Classifier, CheckpointManifest)> {
    let manifest: CheckpointManifest = io::read_json(&dir.join(MANIFEST))?;
    let path = dir.join(ARCHIVE);
    let bytes = io::read(&path)?;
    let corrupt = |why: &str| Error::persistence(&path, why);
    if bytes.len() < 28 + 32 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint archive or truncated header"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(corrupt("checksum mismatch (truncated or corrupt archive)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt("unsupported archive version"));
    }
    let n_params = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let n_running = u64::from_le_bytes(body[20..28].try_into().expect("8 bytes")) as usize;
    let values = &body[28..];
    if values.len() != 8 * (n_params + n_running) {
        return Err(corrupt("archive length does not match its header"));
    }
    let mut floats = values
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let params: Vec<f64> = floats.by_ref().take(n_params).collect();
    let mut running = Vec::new();
    for b in manifest.spec.blocks() {
        let m: Vec<f64> = floats.by_ref().take(b.out_c).collect();
        let v: Vec<f64> = floats.by_ref().take(b.out_c).collect();
        running.push((m, v));
    }
    if floats.next().is_some() {
        return Err(corrupt("archive holds more values than the spec needs"));
    }
    let model = Classifier::from_parts(manifest.spec.clone(), params, running)
        .map_err(|e| Error::persistence(&path, e))?;
    if model.param_hash() != manifest.param_hash {
        return Err(Error::persistence(
            &path,
            "parameter hash differs from manifest",
        ));
    }
    Ok((model, manifest))
}
