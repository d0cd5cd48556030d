use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor4;

/// Label-preserving image transform that defines one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainTransform {
    Identity,
    /// Counter-clockwise rotation about the image center, zero fill.
    Rotation {
        degrees: f64,
    },
    ColorInvert,
    /// Pulls dark pixels toward `rgb`: `out = tint + (1 - tint)·x`.
    BackgroundTint {
        rgb: [f64; 3],
    },
    /// Additive Gaussian noise, clamped; the per-image stream is derived
    /// from `seed` and the image content, so the transform stays pure.
    Noise {
        std: f64,
        seed: u64,
    },
}

impl DomainTransform {
    pub fn short_name(&self) -> String {
        match self {
            DomainTransform::Identity => "identity".into(),
            DomainTransform::Rotation { degrees } => format!("rot{degrees}"),
            DomainTransform::ColorInvert => "invert".into(),
            DomainTransform::BackgroundTint { .. } => "tint".into(),
            DomainTransform::Noise { std, .. } => format!("noise{std}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainTransform::Rotation { degrees } if !degrees.is_finite() => {
                Err(Error::config("rotation angle must be finite"))
            }
            DomainTransform::BackgroundTint { rgb }
                if rgb.iter().any(|v| !(0.0..=1.0).contains(v)) =>
            {
                Err(Error::config("tint components must lie in [0, 1]"))
            }
            DomainTransform::Noise { std, .. } if !(*std >= 0.0) => {
                Err(Error::config("noise std must be non-negative"))
            }
            _ => Ok(()),
        }
    }

    /// Parses a transform from its TOML table form.
    pub fn from_toml(text: &str) -> Result<Self> {
        let t: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

/// Applies `t` to every image. Inputs must lie in `[0, 1]`; outputs do too.
pub fn apply_transform(images: &Tensor4, t: &DomainTransform) -> Result<Tensor4> {
    t.validate()?;
    if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::input("images must lie in [0, 1]"));
    }
    let [c, h, w] = images.item_shape();
    let mut out = images.clone();
    match t {
        DomainTransform::Identity => {}
        DomainTransform::Rotation { degrees } => {
            for i in 0..images.n() {
                rotate(images.item(i), out.item_mut(i), c, h, w, *degrees);
            }
        }
        DomainTransform::ColorInvert => {
            for v in out.data_mut() {
                *v = 1.0 - *v;
            }
        }
        DomainTransform::BackgroundTint { rgb } => {
            let hw = h * w;
            for i in 0..images.n() {
                let item = out.item_mut(i);
                for ch in 0..c {
                    let tint = rgb[ch % 3];
                    for v in &mut item[ch * hw..(ch + 1) * hw] {
                        *v = tint + (1.0 - tint) * *v;
                    }
                }
            }
        }
        DomainTransform::Noise { std, seed } => {
            for i in 0..images.n() {
                let mut hasher = Sha256::new();
                hasher.update(seed.to_le_bytes());
                for v in images.item(i) {
                    hasher.update(v.to_le_bytes());
                }
                let digest = hasher.finalize();
                let mut r =
                    rng::from_seed(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")));
                for v in out.item_mut(i) {
                    let z: f64 = r.sample(StandardNormal);
                    *v = (*v + std * z).clamp(0.0, 1.0);
                }
            }
        }
    }
    out.clamp_in_place(0.0, 1.0);
    out.round_to_f32();
    Ok(out)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

// Inverse mapping with bilinear sampling. Coordinates are relative to the
// image center with y pointing down, so a visually counter-clockwise turn
// maps (x, y) to (x cos + y sin, -x sin + y cos).
fn rotate(src: &[f64], dst: &mut [f64], c: usize, h: usize, w: usize, degrees: f64) {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let hw = h * w;
    for r in 0..h {
        for col in 0..w {
            let (xo, yo) = (col as f64 - cx, r as f64 - cy);
            let xs = snap(xo * cos - yo * sin + cx);
            let ys = snap(xo * sin + yo * cos + cy);
            let (x0, y0) = (xs.floor(), ys.floor());
            let (fx, fy) = (xs - x0, ys - y0);
            for ch in 0..c {
                let plane = &src[ch * hw..(ch + 1) * hw];
                let at = |yy: f64, xx: f64| -> f64 {
                    if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
                        0.0
                    } else {
                        plane[yy as usize * w + xx as usize]
                    }
                };
                let mut v = 0.0;
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let weight = wy * wx;
                        if weight != 0.0 {
                            v += weight * at(y0 + dy, x0 + dx);
                        }
                    }
                }
                dst[ch * hw + r * w + col] = v;
            }
        }
    }
}
