//! Random flip, reflection-padded jitter and cutout, expressed as a pixel
//! gather so gradients can be routed back to the optimized images.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StageRng};
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub horizontal_flip: bool,
    pub jitter_max_pixels: usize,
    pub cutout: bool,
    pub cutout_size: usize,
    pub fill_value: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self::digits()
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            horizontal_flip: false,
            jitter_max_pixels: 0,
            cutout: false,
            cutout_size: 0,
            fill_value: 0.0,
        }
    }

    /// Digits preset: jitter and cutout, no flips (a mirrored digit is not a digit).
    pub fn digits() -> Self {
        Self {
            horizontal_flip: false,
            jitter_max_pixels: 2,
            cutout: true,
            cutout_size: 6,
            fill_value: 0.0,
        }
    }

    /// Natural-image preset with flips enabled.
    pub fn natural_images() -> Self {
        Self {
            horizontal_flip: true,
            ..Self::digits()
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let side = height.min(width);
        if self.jitter_max_pixels >= side {
            return Err(Error::config(
                "jitter_max_pixels must be smaller than the image side",
            ));
        }
        if self.cutout && (self.cutout_size == 0 || self.cutout_size >= side) {
            return Err(Error::config("cutout_size must be in [1, image side)"));
        }
        Ok(())
    }
}

/// Concrete per-image pixel maps drawn from a policy.
pub struct AugmentPlan {
    h: usize,
    w: usize,
    fill: f64,
    // per image: source pixel for each output pixel, None inside the cutout
    maps: Vec<Vec<Option<u32>>>,
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

impl AugmentPlan {
    pub fn sample(
        n: usize,
        h: usize,
        w: usize,
        policy: &AugmentPolicy,
        rng: &mut StageRng,
    ) -> Self {
        let j = policy.jitter_max_pixels as i64;
        let maps = (0..n)
            .map(|_| {
                let flip = policy.horizontal_flip && rng.random_bool(0.5);
                let (dy, dx) = if j > 0 {
                    (
                        rng.random_range(-j..=j) as isize,
                        rng.random_range(-j..=j) as isize,
                    )
                } else {
                    (0, 0)
                };
                let cut = policy.cutout.then(|| {
                    let s = policy.cutout_size;
                    (rng.random_range(0..=h - s), rng.random_range(0..=w - s), s)
                });
                let mut map = Vec::with_capacity(h * w);
                for r in 0..h {
                    for c in 0..w {
                        if let Some((cy, cx, s)) = cut {
                            if (cy..cy + s).contains(&r) && (cx..cx + s).contains(&c) {
                                map.push(None);
                                continue;
                            }
                        }
                        // translate, then undo the flip
                        let sr = reflect(r as isize - dy, h);
                        let mut sc = reflect(c as isize - dx, w);
                        if flip {
                            sc = w - 1 - sc;
                        }
                        map.push(Some((sr * w + sc) as u32));
                    }
                }
                map
            })
            .collect();
        Self {
            h,
            w,
            fill: policy.fill_value,
            maps,
        }
    }

    pub fn apply(&self, images: &Tensor4) -> Tensor4 {
        let [n, c, h, w] = images.shape();
        assert_eq!((n, h, w), (self.maps.len(), self.h, self.w));
        let hw = h * w;
        let mut out = Tensor4::zeros(images.shape());
        for (i, map) in self.maps.iter().enumerate() {
            let src = images.item(i);
            let dst = out.item_mut(i);
            for ch in 0..c {
                for (p, m) in map.iter().enumerate() {
                    dst[ch * hw + p] = match m {
                        Some(s) => src[ch * hw + *s as usize],
                        None => self.fill,
                    };
                }
            }
        }
        out
    }

    /// Adjoint of [`Self::apply`]: scatters output gradients onto inputs.
    pub fn backward(&self, grad_out: &Tensor4) -> Tensor4 {
        let [_, c, h, w] = grad_out.shape();
        let hw = h * w;
        let mut g = Tensor4::zeros(grad_out.shape());
        for (i, map) in self.maps.iter().enumerate() {
            let src = grad_out.item(i);
            let dst = g.item_mut(i);
            for ch in 0..c {
                for (p, m) in map.iter().enumerate() {
                    if let Some(s) = m {
                        dst[ch * hw + *s as usize] += src[ch * hw + p];
                    }
                }
            }
        }
        g
    }
}

/// Applies a freshly sampled plan; deterministic given `seed`.
pub fn augment_batch(images: &Tensor4, policy: &AugmentPolicy, seed: u64) -> Result<Tensor4> {
    let [n, _, h, w] = images.shape();
    policy.validate(h, w)?;
    let plan = AugmentPlan::sample(n, h, w, policy, &mut rng::from_seed(seed));
    Ok(plan.apply(images))
}
