//! Synthetic datasets and their on-disk form:
//!
//! ```text
//! <dir>/images.f32     N×C×H×W little-endian f32
//! <dir>/labels.u32     N little-endian u32
//! <dir>/manifest.json  provenance, shape, digests, seed, teacher hashes
//! <dir>/trace.csv      batch,step,loss of the synthesis run
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor4;

/// Where a batch of images came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Inverted from teacher `domain`.
    DomainSpecific { domain: usize },
    /// Fused from teachers `a` (moment target) and `b`.
    CrossDomain { a: usize, b: usize },
    /// Real benchmark images; refused by every data-free stage.
    Original { domain: usize },
}

impl Provenance {
    pub fn is_synthetic(&self) -> bool {
        !matches!(self, Provenance::Original { .. })
    }

    /// Teachers whose predictions form the soft target.
    pub fn teachers(&self) -> Vec<usize> {
        match *self {
            Provenance::DomainSpecific { domain } => vec![domain],
            Provenance::CrossDomain { a, b } => vec![a, b],
            Provenance::Original { .. } => vec![],
        }
    }

    pub fn tag(&self) -> String {
        match *self {
            Provenance::DomainSpecific { domain } => format!("ds{domain}"),
            Provenance::CrossDomain { a, b } => format!("cd{a}_{b}"),
            Provenance::Original { domain } => format!("orig{domain}"),
        }
    }
}

/// Fails unless `p` is synthetic; the data-freeness guard of each stage.
pub fn require_synthetic(p: &Provenance, stage: &str) -> Result<()> {
    if p.is_synthetic() {
        Ok(())
    } else {
        Err(Error::input(format!(
            "data-freeness violation: {stage} received original images ({})",
            p.tag()
        )))
    }
}

/// Loss per optimization step for every synthesized batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisTrace {
    pub batches: Vec<Vec<f64>>,
}

impl SynthesisTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("batch,step,loss\n");
        for (b, steps) in self.batches.iter().enumerate() {
            for (i, l) in steps.iter().enumerate() {
                s.push_str(&format!("{b},{i},{l}\n"));
            }
        }
        s
    }

    /// True when every batch ends below where it started.
    pub fn all_improved(&self) -> bool {
        self.batches
            .iter()
            .all(|b| b.len() >= 2 && b[b.len() - 1] < b[0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub images: Tensor4,
    pub labels: Vec<usize>,
    pub provenance: Provenance,
    /// Digest of the generator configuration.
    pub config_digest: String,
    pub seed: u64,
    /// Parameter hashes of the teachers used, in provenance order.
    pub teacher_hashes: Vec<String>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    provenance: Provenance,
    count: usize,
    image_shape: [usize; 3],
    dtype: String,
    config_digest: String,
    seed: u64,
    teacher_hashes: Vec<String>,
    stage_digest: Option<String>,
    #[serde(default)]
    audit: Option<serde_json::Value>,
}

pub fn save_synthetic(
    ds: &SyntheticDataset,
    trace: Option<&SynthesisTrace>,
    dir: &Path,
    stage_digest: Option<&str>,
    audit: Option<serde_json::Value>,
) -> Result<()> {
    io::write_f32(&dir.join("images.f32"), ds.images.data())?;
    io::write_u32(&dir.join("labels.u32"), &ds.labels)?;
    if let Some(t) = trace {
        io::write_atomic(&dir.join("trace.csv"), t.to_csv().as_bytes())?;
    }
    io::write_json(
        &dir.join("manifest.json"),
        &DatasetManifest {
            provenance: ds.provenance,
            count: ds.len(),
            image_shape: ds.images.item_shape(),
            dtype: "f32-le".into(),
            config_digest: ds.config_digest.clone(),
            seed: ds.seed,
            teacher_hashes: ds.teacher_hashes.clone(),
            stage_digest: stage_digest.map(str::to_string),
            audit,
        },
    )
}

/// Loads a dataset and returns it with the stage digest it was saved under.
pub fn load_synthetic(dir: &Path) -> Result<(SyntheticDataset, Option<String>)> {
    let m: DatasetManifest = io::read_json(&dir.join("manifest.json"))?;
    let [c, h, w] = m.image_shape;
    let data = io::read_f32(&dir.join("images.f32"), m.count * c * h * w)?;
    let labels = io::read_u32(&dir.join("labels.u32"), m.count)?;
    Ok((
        SyntheticDataset {
            images: Tensor4::from_vec([m.count, c, h, w], data)?,
            labels,
            provenance: m.provenance,
            config_digest: m.config_digest,
            seed: m.seed,
            teacher_hashes: m.teacher_hashes,
        },
        m.stage_digest,
    ))
}
