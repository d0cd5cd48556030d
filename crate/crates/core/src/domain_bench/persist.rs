//! On-disk benchmark layout:
//!
//! ```text
//! <dir>/manifest.json                 num_classes, seed, image shape, domain list
//! <dir>/domain_<id>/manifest.json     transform, per-split count/labels/ids
//! <dir>/domain_<id>/<split>.f32       N×C×H×W little-endian f32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Domain, DomainTransform, LabeledImages, MultiDomainBenchmark};
use crate::error::{Error, Result};
use crate::io;
use crate::tensor::Tensor4;

#[derive(Serialize, Deserialize)]
struct BenchManifest {
    num_classes: usize,
    seed: u64,
    image_shape: [usize; 3],
    dtype: String,
    domains: Vec<(usize, String)>,
    #[serde(default)]
    stage_digest: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SplitManifest {
    count: usize,
    labels: Vec<usize>,
    ids: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct DomainManifest {
    id: usize,
    name: String,
    transform: DomainTransform,
    seed: u64,
    image_shape: [usize; 3],
    dtype: String,
    train: SplitManifest,
    val: SplitManifest,
    test: SplitManifest,
}

const DTYPE: &str = "f32-le";

fn split_manifest(s: &LabeledImages) -> SplitManifest {
    SplitManifest {
        count: s.len(),
        labels: s.labels.clone(),
        ids: s.ids.clone(),
    }
}

pub fn save_benchmark(
    bench: &MultiDomainBenchmark,
    dir: &Path,
    stage_digest: Option<&str>,
) -> Result<()> {
    let shape = bench.image_shape();
    for d in &bench.domains {
        let ddir = dir.join(format!("domain_{}", d.id));
        for (name, split) in [("train", &d.train), ("val", &d.val), ("test", &d.test)] {
            io::write_f32(&ddir.join(format!("{name}.f32")), split.images.data())?;
        }
        io::write_json(
            &ddir.join("manifest.json"),
            &DomainManifest {
                id: d.id,
                name: d.name.clone(),
                transform: d.transform.clone(),
                seed: bench.seed,
                image_shape: shape,
                dtype: DTYPE.into(),
                train: split_manifest(&d.train),
                val: split_manifest(&d.val),
                test: split_manifest(&d.test),
            },
        )?;
    }
    io::write_json(
        &dir.join("manifest.json"),
        &BenchManifest {
            num_classes: bench.num_classes,
            seed: bench.seed,
            image_shape: shape,
            dtype: DTYPE.into(),
            domains: bench
                .domains
                .iter()
                .map(|d| (d.id, d.name.clone()))
                .collect(),
            stage_digest: stage_digest.map(str::to_string),
        },
    )
}

/// Stage digest recorded by [`save_benchmark`], if the directory holds one.
pub(crate) fn stored_digest(dir: &Path) -> Option<String> {
    io::read_json::<BenchManifest>(&dir.join("manifest.json"))
        .ok()
        .and_then(|m| m.stage_digest)
}

pub fn load_benchmark(dir: &Path) -> Result<MultiDomainBenchmark> {
    let top: BenchManifest = io::read_json(&dir.join("manifest.json"))?;
    let [c, h, w] = top.image_shape;
    let mut domains = Vec::new();
    for (id, _) in &top.domains {
        let ddir = dir.join(format!("domain_{id}"));
        let m: DomainManifest = io::read_json(&ddir.join("manifest.json"))?;
        let load = |name: &str, s: &SplitManifest| -> Result<LabeledImages> {
            let path = ddir.join(format!("{name}.f32"));
            let data = io::read_f32(&path, s.count * c * h * w)?;
            if s.labels.len() != s.count || s.ids.len() != s.count {
                return Err(Error::persistence(&path, "label/id count mismatch"));
            }
            Ok(LabeledImages {
                images: Tensor4::from_vec([s.count, c, h, w], data)?,
                labels: s.labels.clone(),
                ids: s.ids.clone(),
            })
        };
        domains.push(Domain {
            id: m.id,
            name: m.name.clone(),
            transform: m.transform.clone(),
            train: load("train", &m.train)?,
            val: load("val", &m.val)?,
            test: load("test", &m.test)?,
        });
    }
    Ok(MultiDomainBenchmark {
        domains,
        num_classes: top.num_classes,
        seed: top.seed,
    })
}
