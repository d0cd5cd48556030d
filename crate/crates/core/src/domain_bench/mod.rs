//! Desk-scale multi-domain benchmark with leave-one-domain-out splits.
//!
//! A base set of labeled images is partitioned into disjoint,
//! class-stratified subsamples, one per domain, and each domain's
//! transform is applied to its subsample.

mod digits;
mod persist;
mod transform;

pub use digits::{procedural_digits, DIGIT_CLASSES};
pub(crate) use persist::stored_digest;
pub use persist::{load_benchmark, save_benchmark};
pub use transform::{apply_transform, DomainTransform};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor4;

/// Images with labels and stable example identities.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImages {
    pub images: Tensor4,
    pub labels: Vec<usize>,
    /// Identity of each example in the base set (survives transforms).
    pub ids: Vec<u64>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledImages {
        LabeledImages {
            images: self.images.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    pub fn concat(parts: &[&LabeledImages]) -> Result<LabeledImages> {
        let images: Vec<&Tensor4> = parts.iter().map(|p| &p.images).collect();
        Ok(LabeledImages {
            images: Tensor4::concat(&images)?,
            labels: parts
                .iter()
                .flat_map(|p| p.labels.iter().copied())
                .collect(),
            ids: parts.iter().flat_map(|p| p.ids.iter().copied()).collect(),
        })
    }

    pub fn class_histogram(&self, num_classes: usize) -> Vec<usize> {
        let mut h = vec![0; num_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 2000,
            val: 500,
            test: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub id: usize,
    pub name: String,
    pub transform: DomainTransform,
    pub train: LabeledImages,
    pub val: LabeledImages,
    pub test: LabeledImages,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiDomainBenchmark {
    pub domains: Vec<Domain>,
    pub num_classes: usize,
    pub seed: u64,
}

impl MultiDomainBenchmark {
    pub fn domain(&self, id: usize) -> Result<&Domain> {
        self.domains
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| Error::input(format!("no domain with id {id}")))
    }

    pub fn domain_ids(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.id).collect()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.domains[0].train.images.item_shape()
    }
}

/// Benchmark section of an experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub transforms: Vec<DomainTransform>,
    pub image_side: usize,
    pub sizes: SplitSizes,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            transforms: default_transforms(),
            image_side: 28,
            sizes: SplitSizes::default(),
            seed: 0,
        }
    }
}

/// Identity, 45° rotation, colour inversion and a warm background tint.
pub fn default_transforms() -> Vec<DomainTransform> {
    vec![
        DomainTransform::Identity,
        DomainTransform::Rotation { degrees: 45.0 },
        DomainTransform::ColorInvert,
        DomainTransform::BackgroundTint {
            rgb: [0.85, 0.45, 0.1],
        },
    ]
}

/// Per-class quota for a split of `size` over `k` classes.
fn class_quota(size: usize, k: usize, class: usize) -> usize {
    size / k + usize::from(class < size % k)
}

/// Partitions `base` into one stratified subsample per transform and
/// applies the transform to it.
pub fn build_benchmark(
    base: &LabeledImages,
    transforms: &[DomainTransform],
    sizes: SplitSizes,
    seed: u64,
) -> Result<MultiDomainBenchmark> {
    if transforms.len() < 3 {
        return Err(Error::config(format!(
            "a leave-one-out benchmark needs at least 3 domains, got {}",
            transforms.len()
        )));
    }
    for t in transforms {
        t.validate()?;
    }
    let num_classes = base.labels.iter().max().map_or(0, |m| m + 1);
    if num_classes < 2 {
        return Err(Error::config("base dataset needs at least two classes"));
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in base.labels.iter().enumerate() {
        pools[y].push(i);
    }
    let mut r = rng::from_seed(seed);
    for (class, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut r);
        let need: usize = [sizes.train, sizes.val, sizes.test]
            .iter()
            .map(|&s| class_quota(s, num_classes, class))
            .sum::<usize>()
            * transforms.len();
        if pool.len() < need {
            return Err(Error::config(format!(
                "class {class} has {} base examples, {need} needed",
                pool.len()
            )));
        }
    }

    let mut cursor = vec![0usize; num_classes];
    let mut take = |size: usize| -> Vec<usize> {
        let mut idx = Vec::with_capacity(size);
        for class in 0..num_classes {
            let q = class_quota(size, num_classes, class);
            idx.extend_from_slice(&pools[class][cursor[class]..cursor[class] + q]);
            cursor[class] += q;
        }
        idx.shuffle(&mut r);
        idx
    };

    let mut domains = Vec::with_capacity(transforms.len());
    let mut names: Vec<String> = Vec::new();
    for (id, t) in transforms.iter().enumerate() {
        let mut name = t.short_name();
        if names.contains(&name) {
            name = format!("{name}_{id}");
        }
        names.push(name.clone());
        let mut split = |size: usize| -> Result<LabeledImages> {
            let mut s = base.select(&take(size));
            s.images = apply_transform(&s.images, t)?;
            Ok(s)
        };
        let train = split(sizes.train)?;
        let val = split(sizes.val)?;
        let test = split(sizes.test)?;
        domains.push(Domain {
            id,
            name,
            transform: t.clone(),
            train,
            val,
            test,
        });
    }
    Ok(MultiDomainBenchmark {
        domains,
        num_classes,
        seed,
    })
}

/// Renders the base digit set and builds the benchmark described by `cfg`.
pub fn build_from_config(cfg: &BenchmarkConfig) -> Result<MultiDomainBenchmark> {
    let per_class = (cfg.sizes.total() / DIGIT_CLASSES + 1) * cfg.transforms.len();
    let mut r = rng::substream(cfg.seed, "benchmark.base");
    let base = procedural_digits(per_class, cfg.image_side, 3, &mut r);
    build_benchmark(
        &base,
        &cfg.transforms,
        cfg.sizes,
        rng::derive_seed(cfg.seed, "benchmark.split"),
    )
}

/// Sources are every domain except the target.
pub fn leave_one_out_splits(
    bench: &MultiDomainBenchmark,
    target_id: usize,
) -> Result<(Vec<&Domain>, &Domain)> {
    let target = bench.domain(target_id)?;
    let sources = bench.domains.iter().filter(|d| d.id != target_id).collect();
    Ok((sources, target))
}
