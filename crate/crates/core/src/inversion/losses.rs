//! Image prior and hinged BN moment-matching losses, each with its gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BnStats, StatGrad};
use crate::tensor::Tensor4;

/// Per-layer slack below which a statistic gap is not penalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMargin {
    pub layer_id: usize,
    pub mean: f64,
    pub var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationMargins {
    pub layers: Vec<LayerMargin>,
}

impl RelaxationMargins {
    /// All-zero margins aligned with `stats` (plain, unrelaxed matching).
    pub fn zeros_like(stats: &BnStats) -> Self {
        Self {
            layers: stats
                .layers
                .iter()
                .map(|l| LayerMargin {
                    layer_id: l.layer_id,
                    mean: 0.0,
                    var: 0.0,
                })
                .collect(),
        }
    }

    /// Every margin multiplied by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for m in &mut self.layers {
            m.mean *= factor;
            m.var *= factor;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.layers {
            if !(m.mean >= 0.0) || !(m.var >= 0.0) {
                return Err(Error::input(format!(
                    "layer {}: relaxation margins must be non-negative",
                    m.layer_id
                )));
            }
        }
        Ok(())
    }
}

/// `tv_weight·TV(x) + l2_weight·‖x‖²`, both summed over the batch, where TV
/// sums squared differences between horizontal and vertical neighbours.
pub fn image_prior_loss(images: &Tensor4, tv_weight: f64, l2_weight: f64) -> f64 {
    image_prior_with_grad(images, tv_weight, l2_weight, false).0
}

/// Gradient of [`image_prior_loss`] w.r.t. the pixels.
pub fn image_prior_grad(images: &Tensor4, tv_weight: f64, l2_weight: f64) -> Tensor4 {
    image_prior_with_grad(images, tv_weight, l2_weight, true)
        .1
        .expect("gradient requested")
}

pub(crate) fn image_prior_with_grad(
    images: &Tensor4,
    tv_weight: f64,
    l2_weight: f64,
    want_grad: bool,
) -> (f64, Option<Tensor4>) {
    let [n, c, h, w] = images.shape();
    let x = images.data();
    let mut grad = want_grad.then(|| Tensor4::zeros(images.shape()));
    let mut tv = 0.0;
    let mut l2 = 0.0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for r in 0..h {
            for col in 0..w {
                let i = base + r * w + col;
                l2 += x[i] * x[i];
                if let Some(g) = grad.as_mut() {
                    g.data_mut()[i] += 2.0 * l2_weight * x[i];
                }
                let mut neighbour = |j: usize| {
                    let d = x[j] - x[i];
                    tv += d * d;
                    if let Some(g) = grad.as_mut() {
                        g.data_mut()[j] += 2.0 * tv_weight * d;
                        g.data_mut()[i] -= 2.0 * tv_weight * d;
                    }
                };
                if col + 1 < w {
                    neighbour(i + 1);
                }
                if r + 1 < h {
                    neighbour(i + w);
                }
            }
        }
    }
    (tv_weight * tv + l2_weight * l2, grad)
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `Σ_l max(‖μ_l − μ̂_l‖ − δ_l, 0) + Σ_l max(‖σ²_l − σ̂²_l‖ − γ_l, 0)`.
pub fn moment_matching_loss(
    batch: &BnStats,
    target: &BnStats,
    margins: &RelaxationMargins,
) -> Result<f64> {
    Ok(moment_matching_with_grad(batch, target, margins)?.0)
}

/// Loss plus its gradient w.r.t. the batch means and variances.
///
/// At a zero gap the norm is not differentiable; the gradient there is 0.
pub(crate) fn moment_matching_with_grad(
    batch: &BnStats,
    target: &BnStats,
    margins: &RelaxationMargins,
) -> Result<(f64, Vec<Option<StatGrad>>)> {
    batch.check_aligned(target)?;
    margins.validate()?;
    if margins.layers.len() != batch.layers.len()
        || margins
            .layers
            .iter()
            .zip(&batch.layers)
            .any(|(m, l)| m.layer_id != l.layer_id)
    {
        return Err(Error::input(
            "relaxation margins are not aligned with the BN layers",
        ));
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.layers.len());
    for ((b, t), m) in batch.layers.iter().zip(&target.layers).zip(&margins.layers) {
        let mut hinge = |x: &[f64], y: &[f64], slack: f64| -> Vec<f64> {
            let dist = l2_distance(x, y);
            if dist - slack > 0.0 {
                total += dist - slack;
                x.iter().zip(y).map(|(a, c)| (a - c) / dist).collect()
            } else {
                vec![0.0; x.len()]
            }
        };
        let d_mean = hinge(&b.mean, &t.mean, m.mean);
        let d_var = hinge(&b.var, &t.var, m.var);
        let active = d_mean.iter().chain(&d_var).any(|g| *g != 0.0);
        grads.push(active.then_some(StatGrad { d_mean, d_var }));
    }
    Ok((total, grads))
}
