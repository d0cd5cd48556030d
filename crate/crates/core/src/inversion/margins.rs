//! Relaxation margins from the distribution of statistic gaps.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::losses::{LayerMargin, RelaxationMargins};
use crate::error::{Error, Result};
use crate::models::{capture_batch_bn_stats, BnStats, ClassifierSpec, TeacherModel};
use crate::rng::{self, StageRng};
use crate::tensor::Tensor4;

/// Per-layer samples of ‖μ − μ̂‖ and ‖σ² − σ̂²‖, one per observed batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGaps {
    pub layer_id: usize,
    pub mean_gaps: Vec<f64>,
    pub var_gaps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapSamples {
    pub layers: Vec<LayerGaps>,
}

impl GapSamples {
    pub(crate) fn empty_like(reference: &BnStats) -> Self {
        Self {
            layers: reference
                .layers
                .iter()
                .map(|l| LayerGaps {
                    layer_id: l.layer_id,
                    mean_gaps: Vec::new(),
                    var_gaps: Vec::new(),
                })
                .collect(),
        }
    }

    /// Appends the gaps between one batch's statistics and `reference`.
    pub(crate) fn record(&mut self, batch: &BnStats, reference: &BnStats) -> Result<()> {
        batch.check_aligned(reference)?;
        for ((g, b), r) in self
            .layers
            .iter_mut()
            .zip(&batch.layers)
            .zip(&reference.layers)
        {
            g.mean_gaps.push(distance(&b.mean, &r.mean));
            g.var_gaps.push(distance(&b.var, &r.var));
        }
        Ok(())
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Images whose model-normalized values are i.i.d. standard normal.
pub fn standard_noise(spec: &ClassifierSpec, n: usize, rng: &mut StageRng) -> Tensor4 {
    let [c, h, w] = spec.input_shape;
    let mut t = Tensor4::zeros([n, c, h, w]);
    for i in 0..n {
        let item = t.item_mut(i);
        for ch in 0..c {
            let (mu, sd) = (spec.input_mean[ch], spec.input_std[ch]);
            for v in &mut item[ch * h * w..(ch + 1) * h * w] {
                let z: f64 = rng.sample(StandardNormal);
                *v = mu + sd * z;
            }
        }
    }
    t
}

/// Gaps between the teacher's stored statistics and those of
/// `n_batches` standard-normal noise batches.
pub fn random_stat_gap_samples(
    teacher: &TeacherModel,
    n_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<GapSamples> {
    if n_batches == 0 || batch_size == 0 {
        return Err(Error::input("need at least one noise batch of size >= 1"));
    }
    let stored = teacher.stored_bn_stats();
    let spec = crate::models::Model::network(teacher).spec().clone();
    let mut r = rng::from_seed(seed);
    let mut gaps = GapSamples::empty_like(&stored);
    for _ in 0..n_batches {
        let noise = standard_noise(&spec, batch_size, &mut r);
        gaps.record(&capture_batch_bn_stats(teacher, &noise)?, &stored)?;
    }
    Ok(gaps)
}

/// `epsilon`-th percentile with linear interpolation between order
/// statistics (rank `ε/100·(n−1)`).
pub fn percentile(samples: &[f64], epsilon: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&epsilon) {
        return Err(Error::input(format!(
            "percentile {epsilon} outside [0, 100]"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = epsilon / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn relaxation_margins(gaps: &GapSamples, epsilon: f64) -> Result<RelaxationMargins> {
    let layers = gaps
        .layers
        .iter()
        .map(|l| {
            Ok(LayerMargin {
                layer_id: l.layer_id,
                mean: percentile(&l.mean_gaps, epsilon)?,
                var: percentile(&l.var_gaps, epsilon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RelaxationMargins { layers })
}
