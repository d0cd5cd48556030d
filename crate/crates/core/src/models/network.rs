//! Conv→BN→ReLU classifier with hand-written reverse mode.
//!
//! The forward pass records every intermediate needed for the backward
//! pass in a [`Trace`]. The backward pass can produce gradients w.r.t. the
//! trainable parameters, the input images, or both, and accepts extra
//! gradients injected at each BN layer's batch mean and variance. The
//! latter is how moment-matching losses reach the pixels.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use super::spec::{BlockGeometry, ClassifierSpec, KERNEL};
use super::stats::{channel_moments, BnStats, LayerStats, StatGrad};
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::tensor::{Matrix, Tensor4};

/// Which statistics the BN layers normalize with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Stored running statistics; the forward pass is a pure function.
    Eval,
    /// Batch statistics, as during training.
    Train,
}

#[derive(Clone, Debug)]
struct Layout {
    conv: Vec<usize>,
    gamma: Vec<usize>,
    beta: Vec<usize>,
    lin_w: usize,
    lin_b: usize,
    total: usize,
}

impl Layout {
    fn new(spec: &ClassifierSpec, blocks: &[BlockGeometry]) -> Self {
        let mut off = 0;
        let (mut conv, mut gamma, mut beta) = (vec![], vec![], vec![]);
        for b in blocks {
            conv.push(off);
            off += b.out_c * b.patch_len();
            gamma.push(off);
            off += b.out_c;
            beta.push(off);
            off += b.out_c;
        }
        let lin_w = off;
        off += spec.num_classes * spec.feature_dim();
        let lin_b = off;
        off += spec.num_classes;
        Self {
            conv,
            gamma,
            beta,
            lin_w,
            lin_b,
            total: off,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Classifier {
    spec: ClassifierSpec,
    blocks: Vec<BlockGeometry>,
    layout: Layout,
    params: Vec<f64>,
    running: Vec<(Vec<f64>, Vec<f64>)>,
}

struct BlockTrace {
    cols: Vec<f64>,
    pre_bn: Vec<f64>,
    xhat: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
    inv_std: Vec<f64>,
    out: Vec<f64>,
}

/// Intermediates of one forward pass.
pub struct Trace {
    mode: BnMode,
    n: usize,
    blocks: Vec<BlockTrace>,
    pub features: Matrix,
    pub logits: Matrix,
}

impl Trace {
    /// Per-channel mean and population variance of each BN layer's input.
    pub fn batch_stats(&self) -> BnStats {
        BnStats {
            layers: self
                .blocks
                .iter()
                .enumerate()
                .map(|(l, b)| LayerStats {
                    layer_id: l,
                    mean: b.mean.clone(),
                    var: b.var.clone(),
                })
                .collect(),
        }
    }

    /// Raw BN-input activations of layer `l`, `N×C×H×W` flattened.
    pub fn bn_input(&self, l: usize) -> &[f64] {
        &self.blocks[l].pre_bn
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }
}

/// Output of [`Classifier::backward`].
pub struct Gradients {
    pub params: Option<Vec<f64>>,
    pub input: Option<Tensor4>,
}

impl Classifier {
    pub fn new(spec: ClassifierSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let blocks = spec.blocks();
        let layout = Layout::new(&spec, &blocks);
        let mut params = vec![0.0; layout.total];
        for (l, b) in blocks.iter().enumerate() {
            let std = (2.0 / b.patch_len() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let start = layout.conv[l];
            for p in &mut params[start..start + b.out_c * b.patch_len()] {
                *p = normal.sample(rng);
            }
            params[layout.gamma[l]..layout.gamma[l] + b.out_c].fill(1.0);
        }
        let d = spec.feature_dim();
        let bound = 1.0 / (d as f64).sqrt();
        let uni = Uniform::new(-bound, bound).expect("valid range");
        for p in &mut params[layout.lin_w..layout.lin_w + spec.num_classes * d] {
            *p = uni.sample(rng);
        }
        let running = blocks
            .iter()
            .map(|b| (vec![0.0; b.out_c], vec![1.0; b.out_c]))
            .collect();
        Ok(Self {
            spec,
            blocks,
            layout,
            params,
            running,
        })
    }

    /// Rebuilds a model from raw values (checkpoint loading).
    pub(crate) fn from_parts(
        spec: ClassifierSpec,
        params: Vec<f64>,
        running: Vec<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        spec.validate()?;
        let blocks = spec.blocks();
        let layout = Layout::new(&spec, &blocks);
        if params.len() != layout.total {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if running.len() != blocks.len()
            || running
                .iter()
                .zip(&blocks)
                .any(|((m, v), b)| m.len() != b.out_c || v.len() != b.out_c)
        {
            return Err(Error::input("running statistics do not match the spec"));
        }
        Ok(Self {
            spec,
            blocks,
            layout,
            params,
            running,
        })
    }

    /// Replaces the stored BN statistics.
    pub fn with_running_stats(mut self, stats: &BnStats) -> Result<Self> {
        stats.validate()?;
        stats.check_aligned(&self.stored_bn_stats())?;
        self.running = stats
            .layers
            .iter()
            .map(|l| (l.mean.clone(), l.var.clone()))
            .collect();
        Ok(self)
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn running(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.running
    }

    pub fn stored_bn_stats(&self) -> BnStats {
        BnStats {
            layers: self
                .running
                .iter()
                .enumerate()
                .map(|(l, (m, v))| LayerStats {
                    layer_id: l,
                    mean: m.clone(),
                    var: v.clone(),
                })
                .collect(),
        }
    }

    /// SHA-256 over parameters and stored statistics, hex encoded.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.to_le_bytes());
        }
        for (m, v) in &self.running {
            for x in m.iter().chain(v) {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    fn check_input(&self, images: &Tensor4) -> Result<()> {
        if images.item_shape() != self.spec.input_shape {
            return Err(Error::input(format!(
                "batch item shape {:?} does not match model input {:?}",
                images.item_shape(),
                self.spec.input_shape
            )));
        }
        if images.n() == 0 {
            return Err(Error::input("empty batch"));
        }
        Ok(())
    }

    pub fn forward(&self, images: &Tensor4, mode: BnMode) -> Result<Trace> {
        self.check_input(images)?;
        let n = images.n();
        let [c0, h0, w0] = self.spec.input_shape;
        let hw0 = h0 * w0;
        let mut act: Vec<f64> = images.data().to_vec();
        for i in 0..n {
            for ch in 0..c0 {
                let (mu, sd) = (self.spec.input_mean[ch], self.spec.input_std[ch]);
                for v in &mut act[(i * c0 + ch) * hw0..(i * c0 + ch + 1) * hw0] {
                    *v = (*v - mu) / sd;
                }
            }
        }

        let mut traces = Vec::with_capacity(self.blocks.len());
        for (l, g) in self.blocks.iter().enumerate() {
            let (p, ohw) = (g.patch_len(), g.out_hw());
            let mut cols = vec![0.0; n * p * ohw];
            let mut pre = vec![0.0; n * g.out_c * ohw];
            let w = self.conv_weight(l);
            for i in 0..n {
                let input = &act[i * g.in_c * g.in_hw()..(i + 1) * g.in_c * g.in_hw()];
                let col = &mut cols[i * p * ohw..(i + 1) * p * ohw];
                im2col(input, g, col);
                gemm(
                    g.out_c,
                    p,
                    ohw,
                    w,
                    false,
                    col,
                    false,
                    0.0,
                    &mut pre[i * g.out_c * ohw..(i + 1) * g.out_c * ohw],
                );
            }
            let (mean, var) = channel_moments(&pre, n, g.out_c, ohw);
            let (norm_mean, norm_var) = match mode {
                BnMode::Eval => (&self.running[l].0, &self.running[l].1),
                BnMode::Train => (&mean, &var),
            };
            let inv_std: Vec<f64> = norm_var
                .iter()
                .map(|v| 1.0 / (v + self.spec.bn_eps).sqrt())
                .collect();
            let gamma = &self.params[self.layout.gamma[l]..self.layout.gamma[l] + g.out_c];
            let beta = &self.params[self.layout.beta[l]..self.layout.beta[l] + g.out_c];
            let mut xhat = vec![0.0; pre.len()];
            let mut out = vec![0.0; pre.len()];
            for i in 0..n {
                for ch in 0..g.out_c {
                    let base = (i * g.out_c + ch) * ohw;
                    for k in base..base + ohw {
                        let xh = (pre[k] - norm_mean[ch]) * inv_std[ch];
                        xhat[k] = xh;
                        out[k] = (gamma[ch] * xh + beta[ch]).max(0.0);
                    }
                }
            }
            act = out.clone();
            traces.push(BlockTrace {
                cols,
                pre_bn: pre,
                xhat,
                mean,
                var,
                inv_std,
                out,
            });
        }

        let last = self.blocks.last().expect("at least one block");
        let (d, hw) = (last.out_c, last.out_hw());
        let mut features = Matrix::zeros(n, d);
        for i in 0..n {
            for ch in 0..d {
                let s: f64 = act[(i * d + ch) * hw..(i * d + ch + 1) * hw].iter().sum();
                features.row_mut(i)[ch] = s / hw as f64;
            }
        }
        let k = self.spec.num_classes;
        let mut logits = Matrix::zeros(n, k);
        gemm(
            n,
            d,
            k,
            features.data(),
            false,
            &self.params[self.layout.lin_w..self.layout.lin_w + k * d],
            true,
            0.0,
            logits.data_mut(),
        );
        let bias = &self.params[self.layout.lin_b..self.layout.lin_b + k];
        for i in 0..n {
            for (z, b) in logits.row_mut(i).iter_mut().zip(bias) {
                *z += b;
            }
        }
        Ok(Trace {
            mode,
            n,
            blocks: traces,
            features,
            logits,
        })
    }

    /// Folds the batch statistics of a training-mode pass into the stored ones.
    pub(crate) fn update_running(&mut self, trace: &Trace) {
        debug_assert_eq!(trace.mode, BnMode::Train);
        let mom = self.spec.bn_momentum;
        for (run, b) in self.running.iter_mut().zip(&trace.blocks) {
            for (r, m) in run.0.iter_mut().zip(&b.mean) {
                *r = (1.0 - mom) * *r + mom * m;
            }
            for (r, v) in run.1.iter_mut().zip(&b.var) {
                *r = (1.0 - mom) * *r + mom * v;
            }
        }
    }

    /// Reverse pass.
    ///
    /// `stat_grads` is either empty or holds one optional entry per BN layer
    /// with the loss gradient w.r.t. that layer's batch mean and variance.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_logits: &Matrix,
        stat_grads: &[Option<StatGrad>],
        want_params: bool,
        want_input: bool,
    ) -> Gradients {
        let n = trace.n;
        let k = self.spec.num_classes;
        let d = self.spec.feature_dim();
        assert_eq!(grad_logits.rows(), n);
        assert_eq!(grad_logits.cols(), k);
        assert!(stat_grads.is_empty() || stat_grads.len() == self.blocks.len());
        let mut pg = if want_params {
            vec![0.0; self.layout.total]
        } else {
            Vec::new()
        };

        let lin_w = &self.params[self.layout.lin_w..self.layout.lin_w + k * d];
        let mut d_feat = vec![0.0; n * d];
        gemm(
            n,
            k,
            d,
            grad_logits.data(),
            false,
            lin_w,
            false,
            0.0,
            &mut d_feat,
        );
        if want_params {
            gemm(
                k,
                n,
                d,
                grad_logits.data(),
                true,
                trace.features.data(),
                false,
                0.0,
                &mut pg[self.layout.lin_w..self.layout.lin_w + k * d],
            );
            let db = &mut pg[self.layout.lin_b..self.layout.lin_b + k];
            for row in grad_logits.iter_rows() {
                for (g, r) in db.iter_mut().zip(row) {
                    *g += r;
                }
            }
        }

        let last = self.blocks.last().expect("at least one block");
        let hw = last.out_hw();
        let mut d_out = vec![0.0; n * d * hw];
        for i in 0..n {
            for ch in 0..d {
                let g = d_feat[i * d + ch] / hw as f64;
                d_out[(i * d + ch) * hw..(i * d + ch + 1) * hw].fill(g);
            }
        }

        let mut input_grad = None;
        for l in (0..self.blocks.len()).rev() {
            let g = self.blocks[l];
            let bt = &trace.blocks[l];
            let (p, ohw, oc) = (g.patch_len(), g.out_hw(), g.out_c);
            let m = (n * ohw) as f64;
            let gamma = &self.params[self.layout.gamma[l]..self.layout.gamma[l] + oc];

            // through ReLU
            let mut d_y = d_out;
            for (dy, o) in d_y.iter_mut().zip(&bt.out) {
                if *o <= 0.0 {
                    *dy = 0.0;
                }
            }
            let mut sum_dy = vec![0.0; oc];
            let mut sum_dy_xhat = vec![0.0; oc];
            for i in 0..n {
                for ch in 0..oc {
                    let base = (i * oc + ch) * ohw;
                    for kx in base..base + ohw {
                        sum_dy[ch] += d_y[kx];
                        sum_dy_xhat[ch] += d_y[kx] * bt.xhat[kx];
                    }
                }
            }
            if want_params {
                pg[self.layout.gamma[l]..self.layout.gamma[l] + oc].copy_from_slice(&sum_dy_xhat);
                pg[self.layout.beta[l]..self.layout.beta[l] + oc].copy_from_slice(&sum_dy);
            }

            // through BN
            let mut d_pre = vec![0.0; d_y.len()];
            let stat = stat_grads.get(l).and_then(Option::as_ref);
            for i in 0..n {
                for ch in 0..oc {
                    let base = (i * oc + ch) * ohw;
                    let s = gamma[ch] * bt.inv_std[ch];
                    for kx in base..base + ohw {
                        let mut v = match trace.mode {
                            BnMode::Eval => d_y[kx] * s,
                            BnMode::Train => {
                                s / m * (m * d_y[kx] - sum_dy[ch] - bt.xhat[kx] * sum_dy_xhat[ch])
                            }
                        };
                        if let Some(sg) = stat {
                            v += sg.d_mean[ch] / m
                                + sg.d_var[ch] * 2.0 * (bt.pre_bn[kx] - bt.mean[ch]) / m;
                        }
                        d_pre[kx] = v;
                    }
                }
            }

            // through conv
            let w = self.conv_weight(l);
            if want_params {
                let dw = &mut pg[self.layout.conv[l]..self.layout.conv[l] + oc * p];
                for i in 0..n {
                    gemm(
                        oc,
                        ohw,
                        p,
                        &d_pre[i * oc * ohw..(i + 1) * oc * ohw],
                        false,
                        &bt.cols[i * p * ohw..(i + 1) * p * ohw],
                        true,
                        1.0,
                        dw,
                    );
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let mut d_in = vec![0.0; n * g.in_c * g.in_hw()];
            let mut d_col = vec![0.0; p * ohw];
            for i in 0..n {
                gemm(
                    p,
                    oc,
                    ohw,
                    w,
                    true,
                    &d_pre[i * oc * ohw..(i + 1) * oc * ohw],
                    false,
                    0.0,
                    &mut d_col,
                );
                col2im(
                    &d_col,
                    &g,
                    &mut d_in[i * g.in_c * g.in_hw()..(i + 1) * g.in_c * g.in_hw()],
                );
            }
            if l == 0 {
                let [c0, h0, w0] = self.spec.input_shape;
                let hw0 = h0 * w0;
                for i in 0..n {
                    for ch in 0..c0 {
                        let sd = self.spec.input_std[ch];
                        for v in &mut d_in[(i * c0 + ch) * hw0..(i * c0 + ch + 1) * hw0] {
                            *v /= sd;
                        }
                    }
                }
                input_grad =
                    Some(Tensor4::from_vec([n, c0, h0, w0], d_in).expect("shape matches input"));
                break;
            }
            d_out = d_in;
        }

        Gradients {
            params: want_params.then_some(pg),
            input: input_grad,
        }
    }

    fn conv_weight(&self, l: usize) -> &[f64] {
        let g = &self.blocks[l];
        &self.params[self.layout.conv[l]..self.layout.conv[l] + g.out_c * g.patch_len()]
    }

    /// Evaluation-mode logits, computed in chunks to bound memory.
    pub fn predict_logits(&self, images: &Tensor4) -> Result<Matrix> {
        self.map_chunks(images, |t| t.logits)
    }

    /// Penultimate (pooled) representation, the input of the linear head.
    pub fn embed(&self, images: &Tensor4) -> Result<Matrix> {
        self.map_chunks(images, |t| t.features)
    }

    fn map_chunks(&self, images: &Tensor4, pick: impl Fn(Trace) -> Matrix) -> Result<Matrix> {
        const CHUNK: usize = 256;
        self.check_input(images)?;
        let mut out = Matrix::zeros(0, 0);
        let mut start = 0;
        while start < images.n() {
            let end = (start + CHUNK).min(images.n());
            let trace = self.forward(&images.slice(start..end), BnMode::Eval)?;
            out.append_rows(&pick(trace));
            start = end;
        }
        Ok(out)
    }
}

fn im2col(input: &[f64], g: &BlockGeometry, col: &mut [f64]) {
    let ohw = g.out_hw();
    for ci in 0..g.in_c {
        let plane = &input[ci * g.in_hw()..(ci + 1) * g.in_hw()];
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row = (ci * KERNEL + kh) * KERNEL + kw;
                let dst = &mut col[row * ohw..(row + 1) * ohw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + kh) as isize - 1;
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kw) as isize - 1;
                        dst[oy * g.out_w + ox] = if iy >= 0
                            && (iy as usize) < g.in_h
                            && ix >= 0
                            && (ix as usize) < g.in_w
                        {
                            plane[iy as usize * g.in_w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &BlockGeometry, out: &mut [f64]) {
    let ohw = g.out_hw();
    for ci in 0..g.in_c {
        let plane = &mut out[ci * g.in_hw()..(ci + 1) * g.in_hw()];
        for kh in 0..KERNEL {
            for kw in 0..KERNEL {
                let row = (ci * KERNEL + kh) * KERNEL + kw;
                let src = &col[row * ohw..(row + 1) * ohw];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + kh) as isize - 1;
                    if iy < 0 || iy as usize >= g.in_h {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kw) as isize - 1;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            plane[iy as usize * g.in_w + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::toy_spec;
    use crate::rng;
    use rand_distr::StandardNormal;

    fn random_batch(n: usize, shape: [usize; 3], seed: u64) -> Tensor4 {
        let mut r = rng::from_seed(seed);
        let len = n * shape.iter().product::<usize>();
        let data = (0..len)
            .map(|_| r.sample::<f64, _>(StandardNormal))
            .collect();
        Tensor4::from_vec([n, shape[0], shape[1], shape[2]], data).unwrap()
    }

    fn perturbed_running(net: Classifier, seed: u64) -> Classifier {
        let mut r = rng::from_seed(seed);
        let mut stats = net.stored_bn_stats();
        for l in &mut stats.layers {
            for m in &mut l.mean {
                *m = r.random_range(-0.5..0.5);
            }
            for v in &mut l.var {
                *v = r.random_range(0.5..2.0);
            }
        }
        net.with_running_stats(&stats).unwrap()
    }

    fn scalar_loss(net: &Classifier, x: &Tensor4, mode: BnMode, probe: &Matrix) -> f64 {
        let t = net.forward(x, mode).unwrap();
        let mut s: f64 = t
            .logits
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| a * b)
            .sum();
        // mix in a function of the captured stats
        for (l, layer) in t.batch_stats().layers.iter().enumerate() {
            let w = (l + 1) as f64 * 0.3;
            s += w * layer.mean.iter().map(|m| m * m).sum::<f64>();
            s += 0.5 * w * layer.var.iter().sum::<f64>();
        }
        s
    }

    fn stat_grads_for(t: &Trace) -> Vec<Option<StatGrad>> {
        t.batch_stats()
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let w = (l + 1) as f64 * 0.3;
                Some(StatGrad {
                    d_mean: layer.mean.iter().map(|m| 2.0 * w * m).collect(),
                    d_var: vec![0.5 * w; layer.var.len()],
                })
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt()
            + b.iter().map(|x| x * x).sum::<f64>().sqrt();
        num / den.max(1e-12)
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for mode in [BnMode::Eval, BnMode::Train] {
            let net = perturbed_running(
                Classifier::new(toy_spec(), &mut rng::from_seed(1)).unwrap(),
                2,
            );
            let x = random_batch(3, [2, 5, 5], 3);
            let probe = Matrix::from_vec(3, 3, random_batch(1, [1, 3, 3], 4).into_vec()).unwrap();
            let t = net.forward(&x, mode).unwrap();
            let g = net.backward(&t, &probe, &stat_grads_for(&t), false, true);
            let analytic = g.input.unwrap().into_vec();
            let h = 1e-6;
            let mut numeric = vec![0.0; x.data().len()];
            for i in 0..numeric.len() {
                let mut xp = x.clone();
                xp.data_mut()[i] += h;
                let mut xm = x.clone();
                xm.data_mut()[i] -= h;
                numeric[i] = (scalar_loss(&net, &xp, mode, &probe)
                    - scalar_loss(&net, &xm, mode, &probe))
                    / (2.0 * h);
            }
            let e = rel_err(&analytic, &numeric);
            assert!(e < 1e-5, "{mode:?}: rel err {e}");
        }
    }

    #[test]
    fn param_gradient_matches_finite_differences() {
        for mode in [BnMode::Eval, BnMode::Train] {
            let net = perturbed_running(
                Classifier::new(toy_spec(), &mut rng::from_seed(5)).unwrap(),
                6,
            );
            let x = random_batch(4, [2, 5, 5], 7);
            let probe = Matrix::from_vec(4, 3, random_batch(1, [1, 4, 3], 8).into_vec()).unwrap();
            let t = net.forward(&x, mode).unwrap();
            let g = net.backward(&t, &probe, &[], true, false);
            let analytic = g.params.unwrap();
            let h = 1e-6;
            let loss = |n: &Classifier| {
                let t = n.forward(&x, mode).unwrap();
                t.logits
                    .data()
                    .iter()
                    .zip(probe.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let mut numeric = vec![0.0; analytic.len()];
            for i in 0..numeric.len() {
                let mut p = net.clone();
                p.params_mut()[i] += h;
                let mut m = net.clone();
                m.params_mut()[i] -= h;
                numeric[i] = (loss(&p) - loss(&m)) / (2.0 * h);
            }
            let e = rel_err(&analytic, &numeric);
            assert!(e < 1e-5, "{mode:?}: rel err {e}");
        }
    }

    #[test]
    fn eval_forward_is_deterministic_and_shape_checked() {
        let net = Classifier::new(toy_spec(), &mut rng::from_seed(9)).unwrap();
        let x = random_batch(4, [2, 5, 5], 10);
        let a = net.forward(&x, BnMode::Eval).unwrap();
        let b = net.forward(&x, BnMode::Eval).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!((a.logits.rows(), a.logits.cols()), (4, 3));
        let wrong = random_batch(1, [2, 4, 5], 11);
        assert!(matches!(
            net.forward(&wrong, BnMode::Eval),
            Err(Error::Input(_))
        ));
    }
}
