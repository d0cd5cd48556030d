//! Toy models and numeric helpers shared by the integration tests.
#![allow(dead_code)]

use dfdg::models::{BnStats, Classifier, ClassifierSpec, LayerStats, TeacherModel};
use dfdg::rng::{self, StageRng};
use dfdg::tensor::{Matrix, Tensor4};
use rand::Rng;

/// Two conv blocks on 2×5×5 inputs, three classes.
pub fn toy_spec() -> ClassifierSpec {
    ClassifierSpec {
        input_shape: [2, 5, 5],
        num_classes: 3,
        channels: vec![3, 4],
        strides: vec![1, 2],
        input_mean: vec![0.1, -0.2],
        input_std: vec![0.9, 1.3],
        bn_eps: 1e-5,
        bn_momentum: 0.1,
    }
}

/// A teacher with random weights and random (valid) stored statistics.
pub fn toy_teacher(spec: &ClassifierSpec, domain: usize, seed: u64) -> TeacherModel {
    let mut r = rng::from_seed(seed);
    let net = Classifier::new(spec.clone(), &mut r).unwrap();
    let layers = spec
        .channels
        .iter()
        .enumerate()
        .map(|(l, &c)| LayerStats {
            layer_id: l,
            mean: (0..c).map(|_| r.random_range(-0.5..0.5)).collect(),
            var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
        })
        .collect();
    let net = net.with_running_stats(&BnStats { layers }).unwrap();
    TeacherModel::new(net, domain, seed)
}

pub fn random_images(spec: &ClassifierSpec, n: usize, r: &mut StageRng) -> Tensor4 {
    let [c, h, w] = spec.input_shape;
    let data = (0..n * c * h * w)
        .map(|_| r.random_range(0.0..1.0))
        .collect();
    Tensor4::from_vec([n, c, h, w], data).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, r: &mut StageRng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| r.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Central differences of `f` at `coords` of `x`.
pub fn numeric_grad(
    x: &[f64],
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn sample_coords(len: usize, k: usize, r: &mut StageRng) -> Vec<usize> {
    (0..k).map(|_| r.random_range(0..len)).collect()
}

/// A complete experiment that runs end to end in seconds.
pub const TINY_CONFIG: &str = r#"
seeds = [3]
methods = ["dekan", "multi_di", "avg_pred", "highest_conf", "best_teacher", "erm"]

[benchmark]
image_side = 10
[benchmark.sizes]
train = 120
val = 40
test = 40

[teacher]
channels = [4, 6]
strides = [1, 2]
[teacher.train]
epochs = 2
batch_size = 32

[inversion]
steps_per_batch = 6
batch_size = 8
num_images = 16
gap_batches = 3
[inversion.augment]
jitter_max_pixels = 1
cutout_size = 2

[fusion]
steps_per_batch = 4
batch_size = 8
num_images = 8
[fusion.augment]
jitter_max_pixels = 1
cutout_size = 2

[distill]
epochs = 2
batch_size = 16
"#;
