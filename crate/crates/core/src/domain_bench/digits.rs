//! Procedurally rendered handwritten-style digits, the base image set.

use rand::Rng;

use super::LabeledImages;
use crate::rng::StageRng;
use crate::tensor::Tensor4;

type Stroke = &'static [(f64, f64)];

// Glyph strokes in unit coordinates, x to the right and y downwards.
const ZERO: &[Stroke] = &[&[
    (0.5, 0.08),
    (0.72, 0.16),
    (0.8, 0.35),
    (0.8, 0.65),
    (0.72, 0.84),
    (0.5, 0.92),
    (0.28, 0.84),
    (0.2, 0.65),
    (0.2, 0.35),
    (0.28, 0.16),
    (0.5, 0.08),
]];
const ONE: &[Stroke] = &[&[(0.32, 0.26), (0.52, 0.08), (0.52, 0.92)]];
const TWO: &[Stroke] = &[&[
    (0.22, 0.28),
    (0.32, 0.12),
    (0.5, 0.08),
    (0.7, 0.13),
    (0.78, 0.3),
    (0.7, 0.48),
    (0.22, 0.9),
    (0.82, 0.9),
]];
const THREE: &[Stroke] = &[
    &[
        (0.22, 0.15),
        (0.5, 0.08),
        (0.76, 0.18),
        (0.74, 0.38),
        (0.46, 0.5),
    ],
    &[
        (0.46, 0.5),
        (0.78, 0.6),
        (0.8, 0.8),
        (0.52, 0.92),
        (0.2, 0.85),
    ],
];
const FOUR: &[Stroke] = &[&[(0.66, 0.92), (0.66, 0.08), (0.16, 0.64), (0.86, 0.64)]];
const FIVE: &[Stroke] = &[&[
    (0.78, 0.09),
    (0.28, 0.09),
    (0.24, 0.45),
    (0.5, 0.4),
    (0.74, 0.5),
    (0.78, 0.74),
    (0.56, 0.92),
    (0.22, 0.86),
]];
const SIX: &[Stroke] = &[&[
    (0.72, 0.1),
    (0.42, 0.28),
    (0.25, 0.58),
    (0.3, 0.85),
    (0.52, 0.92),
    (0.74, 0.8),
    (0.74, 0.6),
    (0.52, 0.5),
    (0.26, 0.62),
]];
const SEVEN: &[Stroke] = &[&[(0.2, 0.09), (0.8, 0.09), (0.44, 0.92)]];
const EIGHT: &[Stroke] = &[
    &[
        (0.5, 0.5),
        (0.3, 0.4),
        (0.3, 0.18),
        (0.5, 0.08),
        (0.7, 0.18),
        (0.7, 0.4),
        (0.5, 0.5),
    ],
    &[
        (0.5, 0.5),
        (0.26, 0.62),
        (0.26, 0.84),
        (0.5, 0.93),
        (0.74, 0.84),
        (0.74, 0.62),
        (0.5, 0.5),
    ],
];
const NINE: &[Stroke] = &[&[
    (0.74, 0.4),
    (0.5, 0.52),
    (0.27, 0.4),
    (0.3, 0.17),
    (0.5, 0.08),
    (0.72, 0.18),
    (0.74, 0.4),
    (0.64, 0.92),
]];

const GLYPHS: [&[Stroke]; 10] = [ZERO, ONE, TWO, THREE, FOUR, FIVE, SIX, SEVEN, EIGHT, NINE];

pub const DIGIT_CLASSES: usize = 10;

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Renders one randomly deformed digit as a `side×side` intensity plane.
fn render_digit(digit: usize, side: usize, rng: &mut StageRng) -> Vec<f64> {
    let angle = rng.random_range(-12f64..12.0).to_radians();
    let scale = rng.random_range(0.72..0.95);
    let shear = rng.random_range(-0.2..0.2);
    let (tx, ty) = (rng.random_range(-0.07..0.07), rng.random_range(-0.07..0.07));
    let half_width = rng.random_range(0.035..0.06);
    let intensity = rng.random_range(0.85..1.0);
    let (sin, cos) = angle.sin_cos();

    let segments: Vec<((f64, f64), (f64, f64))> = GLYPHS[digit]
        .iter()
        .flat_map(|stroke| {
            let pts: Vec<(f64, f64)> = stroke
                .iter()
                .map(|&(u, v)| {
                    let u = u + rng.random_range(-0.025..0.025);
                    let v = v + rng.random_range(-0.025..0.025);
                    let (x, y) = (u - 0.5 + shear * (v - 0.5), v - 0.5);
                    let (x, y) = (cos * x - sin * y, sin * x + cos * y);
                    (x * scale + 0.5 + tx, y * scale + 0.5 + ty)
                })
                .collect();
            pts.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>()
        })
        .collect();

    let mut plane = vec![0.0; side * side];
    let s = side as f64;
    for r in 0..side {
        for c in 0..side {
            let p = ((c as f64 + 0.5) / s, (r as f64 + 0.5) / s);
            let d = segments
                .iter()
                .map(|&(a, b)| segment_distance(p, a, b))
                .fold(f64::INFINITY, f64::min);
            // one-pixel anti-aliased edge
            let cover = ((half_width - d) * s + 0.5).clamp(0.0, 1.0);
            plane[r * side + c] = cover * intensity;
        }
    }
    plane
}

/// `per_class` examples of each of the ten digits, light strokes on black,
/// replicated over `channels`. Labels cycle `0, 1, …, 9, 0, 1, …`.
pub fn procedural_digits(
    per_class: usize,
    side: usize,
    channels: usize,
    rng: &mut StageRng,
) -> LabeledImages {
    let n = per_class * DIGIT_CLASSES;
    let mut images = Tensor4::zeros([n, channels, side, side]);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % DIGIT_CLASSES;
        let plane = render_digit(digit, side, rng);
        let item = images.item_mut(i);
        for ch in 0..channels {
            item[ch * side * side..(ch + 1) * side * side].copy_from_slice(&plane);
        }
        labels.push(digit);
    }
    images.round_to_f32();
    LabeledImages {
        images,
        labels,
        ids: (0..n as u64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn digits_are_in_range_and_not_blank() {
        let d = procedural_digits(2, 28, 3, &mut rng::from_seed(0));
        assert_eq!(d.images.shape(), [20, 3, 28, 28]);
        assert!(d.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for i in 0..20 {
            let ink: f64 = d.images.item(i).iter().sum();
            assert!(ink > 20.0, "digit {} nearly blank", d.labels[i]);
        }
    }
}
