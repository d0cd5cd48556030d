use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel first and second moments at one BN layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub layer_id: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Moments for every BN layer of a model, in layer order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnStats {
    pub layers: Vec<LayerStats>,
}

impl BnStats {
    pub fn validate(&self) -> Result<()> {
        let mut prev: Option<usize> = None;
        for l in &self.layers {
            if prev.is_some_and(|p| l.layer_id <= p) {
                return Err(Error::input("BN layer ids must be strictly increasing"));
            }
            prev = Some(l.layer_id);
            if l.mean.len() != l.var.len() {
                return Err(Error::input(format!(
                    "layer {}: mean and variance lengths differ",
                    l.layer_id
                )));
            }
            if l.var.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::input(format!(
                    "layer {}: negative or NaN variance",
                    l.layer_id
                )));
            }
        }
        Ok(())
    }

    /// Checks that `other` covers the same layers with the same widths.
    pub fn check_aligned(&self, other: &BnStats) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::input(format!(
                "BN layer count mismatch: {} vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.layer_id != b.layer_id || a.mean.len() != b.mean.len() {
                return Err(Error::input(format!(
                    "BN layer misalignment: layer {} ({} ch) vs layer {} ({} ch)",
                    a.layer_id,
                    a.mean.len(),
                    b.layer_id,
                    b.mean.len()
                )));
            }
        }
        Ok(())
    }

    pub fn layer_ids(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.layer_id).collect()
    }
}

/// Gradient of a scalar loss w.r.t. one layer's batch mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct StatGrad {
    pub d_mean: Vec<f64>,
    pub d_var: Vec<f64>,
}

/// Per-channel mean and population variance of an `N×C×(HW)` buffer.
pub(crate) fn channel_moments(data: &[f64], n: usize, c: usize, hw: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * hw) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let s: f64 = data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum();
            mean[ch] += s;
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for i in 0..n {
        for ch in 0..c {
            let mu = mean[ch];
            let s: f64 = data[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                .iter()
                .map(|x| (x - mu) * (x - mu))
                .sum();
            var[ch] += s;
        }
    }
    for v in &mut var {
        *v /= m;
    }
    (mean, var)
}
