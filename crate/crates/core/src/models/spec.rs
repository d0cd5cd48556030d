use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and hyperparameters of a conv→BN→ReLU classifier.
///
/// Each entry of `channels` is one 3×3 convolution block followed by a
/// batch-normalization layer and a ReLU; the last block is globally
/// average-pooled and fed to a linear head with `num_classes` outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    /// `(channels, height, width)` of one input image.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Per-channel normalization applied to `[0, 1]` pixels before the first conv.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_eps() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.1
}

/// Geometry of one convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGeometry {
    pub in_c: usize,
    pub out_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
}

impl BlockGeometry {
    pub fn in_hw(&self) -> usize {
        self.in_h * self.in_w
    }

    pub fn out_hw(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * KERNEL * KERNEL
    }
}

pub(crate) const KERNEL: usize = 3;

impl ClassifierSpec {
    /// Desk-scale default: three blocks on 28×28 RGB inputs.
    pub fn desk_default(num_classes: usize) -> Self {
        Self {
            input_shape: [3, 28, 28],
            num_classes,
            channels: vec![16, 32, 32],
            strides: vec![1, 2, 2],
            input_mean: vec![0.5; 3],
            input_std: vec![0.5; 3],
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.channels.is_empty() {
            return Err(Error::config("at least one conv/BN block is required"));
        }
        if self.channels.len() != self.strides.len() {
            return Err(Error::config("channels and strides must have equal length"));
        }
        if self.channels.iter().any(|&c| c == 0) || self.strides.iter().any(|&s| s == 0) {
            return Err(Error::config("channel counts and strides must be positive"));
        }
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config("input shape must be positive"));
        }
        if self.input_mean.len() != c || self.input_std.len() != c {
            return Err(Error::config(
                "input_mean/input_std must have one entry per channel",
            ));
        }
        if self.input_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::config("input_std entries must be positive"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::config(
                "bn_eps must be > 0 and bn_momentum in [0, 1]",
            ));
        }
        Ok(())
    }

    pub fn bn_layer_count(&self) -> usize {
        self.channels.len()
    }

    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("validated spec has blocks")
    }

    pub fn blocks(&self) -> Vec<BlockGeometry> {
        let [mut in_c, mut h, mut w] = self.input_shape;
        let mut out = Vec::with_capacity(self.channels.len());
        for (&out_c, &stride) in self.channels.iter().zip(&self.strides) {
            // padding 1, kernel 3
            let out_h = (h + 2 - KERNEL) / stride + 1;
            let out_w = (w + 2 - KERNEL) / stride + 1;
            out.push(BlockGeometry {
                in_c,
                out_c,
                in_h: h,
                in_w: w,
                out_h,
                out_w,
                stride,
            });
            in_c = out_c;
            h = out_h;
            w = out_w;
        }
        out
    }
}
