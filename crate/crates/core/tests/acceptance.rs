//! Acceptance gate: one pass/fail line per criterion, nonzero exit if any
//! criterion fails.
//!
//! Criteria 6 to 9 run the full pipeline on the desk benchmark described
//! by `configs/quick.toml`. Artifacts are written under that config's
//! `out_dir` (or `$DFDG_OUT_DIR`) and reused on later runs when their stage
//! digests still match.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use dfdg::baselines::{average_probabilities, entropy, most_confident};
use dfdg::distillation::{
    kd_loss, kd_loss_with_logit_grad, train_student, DistillConfig, KlDirection,
};
use dfdg::domain_bench::LabeledImages;
use dfdg::evaluation::{accuracy, aggregate_table, ExperimentResult, Method};
use dfdg::fusion::{
    compute_cross_domain_targets, cross_domain_loss, cross_domain_loss_grad,
    synthesize_cross_domain_dataset, CrossDomainTargets, FusionConfig,
};
use dfdg::inversion::{
    image_prior_grad, image_prior_loss, moment_matching_input_grad, moment_matching_loss,
    percentile, relaxation_margins, GapSamples, LayerGaps, LayerMargin, Provenance,
    RelaxationMargins, SyntheticDataset,
};
use dfdg::models::{capture_batch_bn_stats, BnStats, LayerStats, Model, TeacherModel};
use dfdg::orchestrator::{run_all, ExperimentConfig, Pipeline, ReportBundle};
use dfdg::rng;
use dfdg::tensor::{Matrix, Tensor4};
use rand::seq::SliceRandom;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: dfdg::Error) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- 1

fn loss_components() -> Check {
    let start = Instant::now();
    let one = |mean: Vec<f64>, var: Vec<f64>| BnStats {
        layers: vec![LayerStats {
            layer_id: 0,
            mean,
            var,
        }],
    };
    let margin = |m: f64, v: f64| RelaxationMargins {
        layers: vec![LayerMargin {
            layer_id: 0,
            mean: m,
            var: v,
        }],
    };
    let target = one(vec![0.0, 0.0], vec![1.0, 1.0]);
    let far = one(vec![3.0, 4.0], vec![1.0, 1.0]);
    let hinge =
        |b: &BnStats, m: &RelaxationMargins| moment_matching_loss(b, &target, m).map_err(err);
    ensure(hinge(&far, &margin(2.0, 0.0))? == 3.0, || {
        "mean gap 5 with δ=2 should give 3".into()
    })?;
    ensure(hinge(&far, &margin(5.5, 0.0))? == 0.0, || {
        "gap inside margin should give 0".into()
    })?;
    ensure(hinge(&target, &margin(0.0, 0.0))? == 0.0, || {
        "equal stats should give 0".into()
    })?;
    // mean gap 5 over δ=1 plus variance gap ‖(2, 0)‖ = 2 over γ=0.5
    let both = one(vec![3.0, 4.0], vec![3.0, 1.0]);
    ensure(
        (hinge(&both, &margin(1.0, 0.5))? - 5.5).abs() < 1e-12,
        || "two-term hinge should give 5.5".into(),
    )?;

    let x = Tensor4::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).map_err(err)?;
    ensure(image_prior_loss(&x, 1.0, 0.0) == 2.0, || {
        "TV of [[0,1],[0,1]] should be 2".into()
    })?;
    ensure(image_prior_loss(&x, 0.0, 0.5) == 1.0, || {
        "0.5·‖x‖² should be 1".into()
    })?;
    ensure(
        image_prior_loss(&Tensor4::zeros([2, 3, 4, 4]), 3.0, 7.0) == 0.0,
        || "zero image should give 0".into(),
    )?;
    // vertical neighbours only: [[0,0],[2,2]] → 2·2² = 8
    let y = Tensor4::from_vec([1, 1, 2, 2], vec![0.0, 0.0, 2.0, 2.0]).map_err(err)?;
    ensure(image_prior_loss(&y, 1.0, 0.0) == 8.0, || {
        "TV of [[0,0],[2,2]] should be 8".into()
    })?;

    let s = Matrix::from_rows(&[vec![0.9, 0.1]]).map_err(err)?;
    let p = Matrix::from_rows(&[vec![0.5, 0.5]]).map_err(err)?;
    let kd = kd_loss(&s, &p, KlDirection::StudentFirst).map_err(err)?;
    ensure((kd - 0.3681).abs() < 1e-4, || {
        format!("KL(0.9,0.1 ‖ 0.5,0.5) = {kd}")
    })?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("hinge, prior and KL hand cases exact; {secs:.2}s"))
}

// ---------------------------------------------------------------- 2

const GRAD_INSTANCES: usize = 20;
const GRAD_TOL: f64 = 1e-4;

fn gradient_checks() -> Check {
    let start = Instant::now();
    let spec = toy_spec();
    let mut r = rng::from_seed(0x6ad);
    let mut worst = [0.0f64; 4];

    for i in 0..GRAD_INSTANCES {
        let x = random_images(&spec, 2, &mut r);
        let (tv, l2) = (r.random_range(0.01..2.0), r.random_range(0.0..2.0));
        let g = image_prior_grad(&x, tv, l2);
        let coords: Vec<usize> = (0..x.data().len()).collect();
        let num = numeric_grad(x.data(), &coords, 1e-5, |v| {
            image_prior_loss(&Tensor4::from_vec(x.shape(), v.to_vec()).unwrap(), tv, l2)
        });
        worst[0] = worst[0].max(relative_error(g.data(), &num));

        let teacher = toy_teacher(&spec, 0, 100 + i as u64);
        let x = random_images(&spec, 4, &mut r);
        let target = perturbed(&teacher.stored_bn_stats(), 0.3, &mut r);
        let margins = half_gap_margins(&teacher, &x, &target);
        let (_, g) = moment_matching_input_grad(&teacher, &x, &target, &margins).map_err(err)?;
        let coords = sample_coords(x.data().len(), 24, &mut r);
        let num = numeric_grad(x.data(), &coords, 1e-5, |v| {
            let xi = Tensor4::from_vec(x.shape(), v.to_vec()).unwrap();
            moment_matching_loss(
                &capture_batch_bn_stats(&teacher, &xi).unwrap(),
                &target,
                &margins,
            )
            .unwrap()
        });
        let picked: Vec<f64> = coords.iter().map(|&c| g.data()[c]).collect();
        worst[1] = worst[1].max(relative_error(&picked, &num));

        let ta = toy_teacher(&spec, 0, 200 + i as u64);
        let tb = toy_teacher(&spec, 1, 300 + i as u64);
        let x = random_images(&spec, 3, &mut r);
        let labels: Vec<usize> = (0..3)
            .map(|_| r.random_range(0..spec.num_classes))
            .collect();
        let targets = perturbed(&ta.stored_bn_stats(), 0.3, &mut r);
        let cdt = CrossDomainTargets {
            source_model_domain: 0,
            data_domain: 1,
            margins: half_gap_margins(&ta, &x, &targets),
            targets,
            gap_samples: GapSamples { layers: vec![] },
        };
        let cfg = FusionConfig {
            alpha1: r.random_range(0.1..2.0),
            alpha2: r.random_range(0.1..2.0),
            tv_weight: 0.05,
            l2_weight: 0.01,
            ..FusionConfig::default()
        };
        let g = cross_domain_loss_grad(&ta, &tb, &x, &labels, &cdt, &cfg).map_err(err)?;
        let coords = sample_coords(x.data().len(), 24, &mut r);
        let num = numeric_grad(x.data(), &coords, 1e-5, |v| {
            let xi = Tensor4::from_vec(x.shape(), v.to_vec()).unwrap();
            cross_domain_loss(&ta, &tb, &xi, &labels, &cdt, &cfg)
                .unwrap()
                .total
        });
        let picked: Vec<f64> = coords.iter().map(|&c| g.data()[c]).collect();
        worst[2] = worst[2].max(relative_error(&picked, &num));

        let logits = random_matrix(3, 4, 2.0, &mut r);
        let target = random_matrix(3, 4, 2.0, &mut r).softmax(1.0);
        let tau = r.random_range(0.5..3.0);
        let dir = if i % 2 == 0 {
            KlDirection::StudentFirst
        } else {
            KlDirection::TeacherFirst
        };
        let (_, g) = kd_loss_with_logit_grad(&logits, &target, tau, dir).map_err(err)?;
        let coords: Vec<usize> = (0..12).collect();
        let num = numeric_grad(logits.data(), &coords, 1e-6, |v| {
            let s = Matrix::from_vec(3, 4, v.to_vec()).unwrap().softmax(tau);
            kd_loss(&s, &target, dir).unwrap()
        });
        worst[3] = worst[3].max(relative_error(g.data(), &num));
    }
    let secs = start.elapsed().as_secs_f64();
    let names = ["prior", "moment", "cross-domain", "kd"];
    let summary = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(worst.iter().all(|w| *w < GRAD_TOL), || {
        format!("max relative error: {summary}")
    })?;
    ensure(secs < 300.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{GRAD_INSTANCES} instances each, max relative error: {summary}; {secs:.1}s"
    ))
}

fn perturbed(stats: &BnStats, scale: f64, r: &mut dfdg::rng::StageRng) -> BnStats {
    let mut out = stats.clone();
    for l in &mut out.layers {
        l.mean
            .iter_mut()
            .for_each(|v| *v += r.random_range(-scale..scale));
        l.var
            .iter_mut()
            .for_each(|v| *v *= 1.0 + r.random_range(-scale..scale));
    }
    out
}

/// Margins at half the current per-layer gaps, so every hinge is active
/// and away from its kink.
fn half_gap_margins(model: &impl Model, x: &Tensor4, target: &BnStats) -> RelaxationMargins {
    let stats = capture_batch_bn_stats(model, x).unwrap();
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    RelaxationMargins {
        layers: stats
            .layers
            .iter()
            .zip(&target.layers)
            .map(|(s, t)| LayerMargin {
                layer_id: s.layer_id,
                mean: 0.5 * dist(&s.mean, &t.mean),
                var: 0.5 * dist(&s.var, &t.var),
            })
            .collect(),
    }
}

// ---------------------------------------------------------------- 3

fn statistic_capture() -> Check {
    let spec = toy_spec();
    let mut r = rng::from_seed(0x57a7);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let teacher = toy_teacher(&spec, 0, 400 + i);
        let x = random_images(&spec, 1 + (i as usize % 5), &mut r);
        let got = capture_batch_bn_stats(&teacher, &x).map_err(err)?;
        let want = brute_force_stats(&teacher, &x);
        worst = worst.max(max_stat_diff(&got, &want));
    }
    ensure(worst < 1e-5, || {
        format!("capture differs from direct convolution by {worst:.2e}")
    })?;

    let ta = toy_teacher(&spec, 0, 500);
    let images = random_images(&spec, 23, &mut r);
    let ds = SyntheticDataset {
        labels: vec![0; images.n()],
        images,
        provenance: Provenance::DomainSpecific { domain: 1 },
        config_digest: String::new(),
        seed: 0,
        teacher_hashes: vec![],
    };
    let cdt = compute_cross_domain_targets(&ta, &ds, 5, 95.0).map_err(err)?;
    let whole = capture_batch_bn_stats(&ta, &ds.images).map_err(err)?;
    let target_diff = max_stat_diff(&cdt.targets, &whole);
    ensure(target_diff < 1e-5, || {
        format!("streamed targets differ by {target_diff:.2e}")
    })?;
    Ok(format!(
        "capture vs direct convolution {worst:.1e}; streamed targets vs single pass {target_diff:.1e}"
    ))
}

fn max_stat_diff(a: &BnStats, b: &BnStats) -> f64 {
    a.layers
        .iter()
        .zip(&b.layers)
        .flat_map(|(x, y)| {
            x.mean
                .iter()
                .zip(&y.mean)
                .chain(x.var.iter().zip(&y.var))
                .map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Direct-loop forward pass (zero padding 1, 3×3 kernels, evaluation-mode
/// BN, ReLU) collecting each BN input's per-channel mean and population
/// variance.
fn brute_force_stats(teacher: &TeacherModel, x: &Tensor4) -> BnStats {
    let net = teacher.network();
    let spec = net.spec();
    let stored = net.stored_bn_stats();
    let params = net.params();
    let [c0, mut h, mut w] = spec.input_shape;
    let n = x.n();
    let mut act: Vec<Vec<Vec<Vec<f64>>>> = (0..n)
        .map(|i| {
            (0..c0)
                .map(|c| {
                    (0..h)
                        .map(|y| {
                            (0..w)
                                .map(|xx| {
                                    (x.item(i)[(c * h + y) * w + xx] - spec.input_mean[c])
                                        / spec.input_std[c]
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut off = 0;
    let mut in_c = c0;
    let mut layers = Vec::new();
    for (l, (&out_c, &stride)) in spec.channels.iter().zip(&spec.strides).enumerate() {
        let weights = &params[off..off + out_c * in_c * 9];
        off += out_c * in_c * 9;
        let gamma = &params[off..off + out_c];
        let beta = &params[off + out_c..off + 2 * out_c];
        off += 2 * out_c;
        let oh = (h - 1) / stride + 1;
        let ow = (w - 1) / stride + 1;
        let mut pre = vec![vec![vec![vec![0.0; ow]; oh]; out_c]; n];
        for i in 0..n {
            for o in 0..out_c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for c in 0..in_c {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    let ix = (ox * stride + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                        continue;
                                    }
                                    s += weights[((o * in_c + c) * 3 + ky) * 3 + kx]
                                        * act[i][c][iy as usize][ix as usize];
                                }
                            }
                        }
                        pre[i][o][oy][ox] = s;
                    }
                }
            }
        }
        let count = (n * oh * ow) as f64;
        let mut mean = vec![0.0; out_c];
        let mut var = vec![0.0; out_c];
        for o in 0..out_c {
            let vals: Vec<f64> = pre
                .iter()
                .flat_map(|p| p[o].iter().flatten().copied())
                .collect();
            mean[o] = vals.iter().sum::<f64>() / count;
            var[o] = vals.iter().map(|v| (v - mean[o]).powi(2)).sum::<f64>() / count;
        }
        let (rm, rv) = (&stored.layers[l].mean, &stored.layers[l].var);
        act = pre
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(o, plane)| {
                        plane
                            .iter()
                            .map(|row| {
                                row.iter()
                                    .map(|v| {
                                        let xh = (v - rm[o]) / (rv[o] + spec.bn_eps).sqrt();
                                        (gamma[o] * xh + beta[o]).max(0.0)
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        layers.push(LayerStats {
            layer_id: l,
            mean,
            var,
        });
        in_c = out_c;
        h = oh;
        w = ow;
    }
    BnStats { layers }
}

// ---------------------------------------------------------------- 4

fn percentile_oracle() -> Check {
    let mut r = rng::from_seed(0x9e7c);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = r.random_range(1..40);
        let mean_gaps: Vec<f64> = (0..len).map(|_| r.random_range(0.0..10.0)).collect();
        let var_gaps: Vec<f64> = (0..len).map(|_| r.random_range(0.0..10.0)).collect();
        let gaps = GapSamples {
            layers: vec![LayerGaps {
                layer_id: 0,
                mean_gaps: mean_gaps.clone(),
                var_gaps: var_gaps.clone(),
            }],
        };
        let mut eps_list = vec![0.0, 50.0, 100.0];
        eps_list.extend((0..5).map(|_| r.random_range(0.0..100.0)));
        for eps in eps_list {
            let m = relaxation_margins(&gaps, eps).map_err(err)?;
            let want_mean = sort_percentile(&mean_gaps, eps);
            let want_var = sort_percentile(&var_gaps, eps);
            let d = (m.layers[0].mean - want_mean)
                .abs()
                .max((m.layers[0].var - want_var).abs());
            let exact = eps == 0.0 || eps == 50.0 || eps == 100.0;
            if exact && d != 0.0 {
                return Err(format!("ε={eps}: off by {d:e} on {len} samples"));
            }
            ensure(d <= 1e-9, || format!("ε={eps}: off by {d:e}"))?;
            worst = worst.max(d);
            ensure(
                percentile(&mean_gaps, eps).map_err(err)? == m.layers[0].mean,
                || "relaxation_margins disagrees with percentile".into(),
            )?;
        }
    }
    Ok(format!(
        "100 sample sets, exact at 0/50/100, max deviation {worst:.1e}"
    ))
}

/// Order statistics with the midpoint rule at ε = 50 and linear
/// interpolation at rank ε/100·(n−1) elsewhere.
fn sort_percentile(samples: &[f64], eps: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if eps == 0.0 {
        return s[0];
    }
    if eps == 100.0 {
        return s[n - 1];
    }
    if eps == 50.0 {
        return if n % 2 == 1 {
            s[n / 2]
        } else {
            s[n / 2 - 1] + 0.5 * (s[n / 2] - s[n / 2 - 1])
        };
    }
    let rank = eps / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    s[lo] + (rank - lo as f64) * (s[hi] - s[lo])
}

// ---------------------------------------------------------------- 5

fn ensemble_exactness() -> Check {
    let m = |rows: &[&[f64]]| {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    };
    let a = m(&[&[0.5, 0.25, 0.25], &[1.0, 0.0, 0.0], &[0.25, 0.5, 0.25]]);
    let b = m(&[&[0.25, 0.5, 0.25], &[0.5, 0.5, 0.0], &[0.5, 0.25, 0.25]]);
    let c = m(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, 1.0], &[0.75, 0.125, 0.125]]);

    let avg = average_probabilities(&[a.clone(), b.clone()]).map_err(err)?;
    let want = m(&[
        &[0.375, 0.375, 0.25],
        &[0.75, 0.25, 0.0],
        &[0.375, 0.375, 0.25],
    ]);
    ensure(avg == want, || format!("average {avg:?}"))?;

    // Row 0: a and b are permutations of each other (tie → a); c is one-hot.
    // Row 1: a and c are one-hot (tie → a).  Row 2: a, b tie; c is sharper.
    let pick = most_confident(&[a.clone(), b.clone(), c.clone()]).map_err(err)?;
    let want = m(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[0.75, 0.125, 0.125]]);
    ensure(pick == want, || format!("highest confidence {pick:?}"))?;
    let pick_ab = most_confident(&[b.clone(), a.clone()]).map_err(err)?;
    let want_ab = m(&[&[0.25, 0.5, 0.25], &[1.0, 0.0, 0.0], &[0.5, 0.25, 0.25]]);
    ensure(pick_ab == want_ab, || format!("tie-break {pick_ab:?}"))?;
    ensure(entropy(&[1.0, 0.0, 0.0]) == 0.0, || {
        "one-hot entropy".into()
    })?;
    ensure(
        (entropy(&[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-15,
        || "uniform entropy".into(),
    )?;
    Ok("averages and lowest-entropy picks exact, ties to the first teacher".into())
}

// ---------------------------------------------------------------- 6–9

struct DeskRun {
    cfg: ExperimentConfig,
    bundle: ReportBundle,
    pipeline: Pipeline,
    secs: f64,
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> Result<ExperimentConfig, String> {
    let mut cfg =
        ExperimentConfig::load(&workspace_root().join("configs/quick.toml")).map_err(err)?;
    if cfg.out_dir.is_relative() {
        cfg.out_dir = workspace_root().join(&cfg.out_dir);
    }
    Ok(cfg)
}

fn desk_run(cfg: ExperimentConfig) -> Result<DeskRun, String> {
    let start = Instant::now();
    let bundle = run_all(cfg.clone(), true).map_err(err)?;
    let pipeline = Pipeline::new(cfg.clone(), true).map_err(err)?;
    Ok(DeskRun {
        cfg,
        bundle,
        pipeline,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn as_labeled(ds: &SyntheticDataset) -> LabeledImages {
    LabeledImages {
        images: ds.images.clone(),
        labels: ds.labels.clone(),
        ids: (0..ds.len() as u64).collect(),
    }
}

fn stage1_gate(run: &mut DeskRun) -> Check {
    let bench = run.pipeline.benchmark().map_err(err)?;
    let mut worst_val: f64 = 1.0;
    let mut worst_syn: f64 = 1.0;
    let mut fails = Vec::new();
    for &seed in &run.cfg.seeds.clone() {
        for d in &bench.domains {
            let t = run.pipeline.teacher(seed, d.id).map_err(err)?;
            let val = accuracy(&t, &d.val).map_err(err)?;
            let ds = run.pipeline.stage1(seed, d.id).map_err(err)?;
            let syn = accuracy(&t, &as_labeled(&ds)).map_err(err)?;
            worst_val = worst_val.min(val);
            worst_syn = worst_syn.min(syn);
            if val < 0.9 || syn < 0.95 {
                fails.push(format!(
                    "seed {seed} {}: val {val:.3}, synthetic {syn:.3}",
                    d.name
                ));
            }
        }
    }
    ensure(fails.is_empty(), || fails.join("; "))?;
    Ok(format!(
        "min teacher val {worst_val:.3} (≥ 0.9), min synthetic top-1 {worst_syn:.3} (≥ 0.95)"
    ))
}

fn stage2_gate(run: &mut DeskRun) -> Check {
    let toy = epsilon_cd_100_toy()?;
    let bench = run.pipeline.benchmark().map_err(err)?;
    let mut worst: f64 = 1.0;
    let mut fails = Vec::new();
    for &seed in &run.cfg.seeds.clone() {
        for a in bench.domain_ids() {
            for b in bench.domain_ids() {
                if a == b {
                    continue;
                }
                let ds = run.pipeline.stage2(seed, a, b).map_err(err)?;
                let data = as_labeled(&ds);
                let acc_a =
                    accuracy(&run.pipeline.teacher(seed, a).map_err(err)?, &data).map_err(err)?;
                let acc_b =
                    accuracy(&run.pipeline.teacher(seed, b).map_err(err)?, &data).map_err(err)?;
                let m = acc_a.min(acc_b);
                worst = worst.min(m);
                if m < 0.9 {
                    fails.push(format!("seed {seed} pair ({a},{b}): {acc_a:.3}/{acc_b:.3}"));
                }
            }
        }
    }
    ensure(fails.is_empty(), || fails.join("; "))?;
    Ok(format!(
        "min pair top-1 under both teachers {worst:.3} (≥ 0.90); {toy}"
    ))
}

/// With ε_CD = 100 and a domain-`b` dataset made of permuted copies of one
/// batch (so every per-batch gap is the same), a batch reproducing teacher
/// `a`'s stored statistics is not penalized.
fn epsilon_cd_100_toy() -> Check {
    let spec = toy_spec();
    let mut r = rng::from_seed(0xcd);
    let reference = random_images(&spec, 6, &mut r);
    let base = toy_teacher(&spec, 0, 600);
    let stored = capture_batch_bn_stats(&base, &reference).map_err(err)?;
    let ta = TeacherModel::new(
        base.network()
            .clone()
            .with_running_stats(&stored)
            .map_err(err)?,
        0,
        600,
    );
    let tb = toy_teacher(&spec, 1, 601);

    let batch_b = random_images(&spec, 6, &mut r);
    let mut parts = Vec::new();
    for _ in 0..4 {
        let mut idx: Vec<usize> = (0..6).collect();
        idx.shuffle(&mut r);
        parts.push(batch_b.select(&idx));
    }
    let refs: Vec<&Tensor4> = parts.iter().collect();
    let images = Tensor4::concat(&refs).map_err(err)?;
    let ds = SyntheticDataset {
        labels: vec![0; images.n()],
        images,
        provenance: Provenance::DomainSpecific { domain: 1 },
        config_digest: String::new(),
        seed: 0,
        teacher_hashes: vec![],
    };
    let cdt = compute_cross_domain_targets(&ta, &ds, 6, 100.0).map_err(err)?;
    let cfg = FusionConfig {
        epsilon_cd: 100.0,
        ..FusionConfig::default()
    };
    let labels = vec![0; 6];
    let loss = cross_domain_loss(&ta, &tb, &reference, &labels, &cdt, &cfg).map_err(err)?;
    ensure(loss.moment <= 1e-9, || {
        format!("ε_CD=100 moment term {:.3e}", loss.moment)
    })?;
    Ok(format!("ε_CD=100 toy moment term {:.1e}", loss.moment))
}

fn directional(run: &mut DeskRun) -> Check {
    let row = |bundle: &ReportBundle, m: Method| {
        bundle
            .results
            .iter()
            .find(|r| r.method == m)
            .map(|r| 100.0 * r.average)
            .ok_or_else(|| format!("no result for {m}"))
    };
    let summary = |bundle: &ReportBundle| -> Result<(f64, f64, f64, f64), String> {
        Ok((
            row(bundle, Method::Dekan)?,
            row(bundle, Method::MultiDi)?,
            row(bundle, Method::AvgPred)?.max(row(bundle, Method::HighestConf)?),
            row(bundle, Method::Erm)?,
        ))
    };
    print!("{}", run.bundle.table.render());
    let (dekan, multi, ens, erm) = summary(&run.bundle)?;
    let band = dekan > ens - 1.0;
    let head = format!(
        "DEKAN {dekan:.1} vs Multi-DI {multi:.1}, best ensemble {ens:.1} (band {}), ERM {erm:.1}; {:.0}s",
        if band { "met" } else { "missed" },
        run.secs
    );
    if dekan >= multi && band {
        return Ok(head);
    }

    // Documented fallback: sweep (λ2 = α2, ε_DS = ε_CD) and report the
    // setting with the best DEKAN accuracy on the sources' validation splits.
    let mut best: Option<(f64, String)> = None;
    let mut any_ordered = dekan >= multi;
    for &weight in &[0.1, 10.0] {
        for &eps in &[50.0, 95.0] {
            let mut cfg = run.cfg.clone();
            cfg.inversion.lambda2 = weight;
            cfg.fusion.alpha2 = weight;
            cfg.inversion.epsilon_ds = eps;
            cfg.fusion.epsilon_cd = eps;
            cfg.out_dir = run.cfg.out_dir.join(format!("sweep_w{weight}_e{eps}"));
            let mut point = desk_run(cfg)?;
            let (d, m, e, _) = summary(&point.bundle)?;
            let val = source_validation(&mut point, Method::Dekan)?;
            let line = format!("λ2=α2={weight}, ε={eps}: DEKAN {d:.1}, Multi-DI {m:.1}, ensemble {e:.1}, val {val:.3}");
            println!("    sweep {line}");
            any_ordered |= d >= m;
            if best.as_ref().is_none_or(|(v, _)| val > *v) {
                best = Some((val, line));
            }
        }
    }
    let (_, line) = best.expect("grid is non-empty");
    let msg = format!("{head}; best validated {line}");
    ensure(any_ordered, || msg.clone())?;
    Ok(msg)
}

/// Mean DEKAN accuracy over seeds and held-out targets, measured on the
/// validation splits of the source domains.
fn source_validation(run: &mut DeskRun, method: Method) -> Result<f64, String> {
    let bench = run.pipeline.benchmark().map_err(err)?;
    let mut total = 0.0;
    let mut count = 0.0;
    for &seed in &run.cfg.seeds.clone() {
        for t in bench.domain_ids() {
            let student = run.pipeline.student(method, seed, t).map_err(err)?;
            for d in bench.domains.iter().filter(|d| d.id != t) {
                total += accuracy(&student, &d.val).map_err(err)?;
                count += 1.0;
            }
        }
    }
    Ok(total / count)
}

fn audit(run: &mut DeskRun) -> Check {
    let entries = &run.bundle.audit;
    ensure(!entries.is_empty(), || {
        "no audit entries were recorded".into()
    })?;
    let failed: Vec<String> = entries
        .iter()
        .filter(|e| !e.passed)
        .map(|e| e.key.clone())
        .collect();
    ensure(failed.is_empty(), || {
        format!("failed audit entries: {failed:?}")
    })?;

    // The provenance assertion must actually fire on original images.
    let spec = toy_spec();
    let mut r = rng::from_seed(0xa0d);
    let ta = toy_teacher(&spec, 0, 700);
    let tb = toy_teacher(&spec, 1, 701);
    let images = random_images(&spec, 4, &mut r);
    let real = SyntheticDataset {
        labels: vec![0; 4],
        images,
        provenance: Provenance::Original { domain: 1 },
        config_digest: String::new(),
        seed: 0,
        teacher_hashes: vec![],
    };
    let fuse = synthesize_cross_domain_dataset(&ta, &tb, &real, &FusionConfig::default());
    ensure(fuse.is_err(), || "stage 2 accepted original images".into())?;
    let distill = train_student(
        &[ta, tb],
        &[real],
        &DistillConfig {
            epochs: 1,
            ..DistillConfig::default()
        },
    );
    ensure(distill.is_err(), || {
        "distillation accepted original images".into()
    })?;
    Ok(format!(
        "{} audit entries passed; original-image inputs rejected",
        entries.len()
    ))
}

// ---------------------------------------------------------------- 10

fn determinism() -> Check {
    let dirs = [
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    ];
    let mut outcomes = Vec::new();
    for dir in &dirs {
        let mut cfg = ExperimentConfig::from_toml_str(TINY_CONFIG).map_err(err)?;
        cfg.out_dir = dir.path().to_path_buf();
        outcomes.push(run_all(cfg, false).map_err(err)?.records);
    }
    ensure(outcomes[0].len() == outcomes[1].len(), || {
        "record counts differ".into()
    })?;
    let mut worst: f64 = 0.0;
    for (a, b) in outcomes[0].iter().zip(&outcomes[1]) {
        ensure(
            a.method == b.method && a.target == b.target && a.seed == b.seed,
            || "record order differs".into(),
        )?;
        worst = worst.max((a.accuracy - b.accuracy).abs());
    }
    ensure(worst <= 1e-6, || format!("accuracies differ by {worst:e}"))?;
    Ok(format!(
        "{} records reproduced, max difference {worst:e}",
        outcomes[0].len()
    ))
}

// ---------------------------------------------------------------- 11

fn table_arithmetic() -> Check {
    let names = ["art", "cartoon", "photo", "sketch"]
        .map(String::from)
        .to_vec();
    let row = vec![0.799, 0.654, 0.964, 0.795];
    let result =
        ExperimentResult::from_grid(Method::Dekan, names, vec![0], vec![row]).map_err(err)?;
    let table = aggregate_table(&[result]).map_err(err)?;
    let avg = format!("{:.1}", table.rows[0].average);
    ensure(avg == "80.3", || format!("average rendered as {avg}"))?;
    let csv = table.to_csv();
    ensure(
        csv.lines().nth(1) == Some("dekan,79.9,65.4,96.4,79.5,80.3"),
        || format!("csv row: {csv}"),
    )?;
    Ok("[79.9, 65.4, 96.4, 79.5] → Avg 80.3".into())
}

// ---------------------------------------------------------------- driver

fn main() {
    let list_only = std::env::args().any(|a| a == "--list");
    if list_only {
        println!("acceptance: test");
        return;
    }
    // `DFDG_ACCEPTANCE_ONLY=1,2,11` restricts the run to those criteria.
    let only: Option<Vec<usize>> = std::env::var("DFDG_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<(usize, Check)> = Vec::new();
    let mut report = |n: usize, name: &str, c: Check| {
        match &c {
            Ok(msg) => println!("criterion {n:>2} PASS  {name}: {msg}"),
            Err(msg) => println!("criterion {n:>2} FAIL  {name}: {msg}"),
        }
        results.push((n, c));
    };
    let cheap: [(usize, &str, fn() -> Check); 5] = [
        (1, "loss components", loss_components),
        (2, "gradient checks", gradient_checks),
        (3, "statistic capture", statistic_capture),
        (4, "percentile oracle", percentile_oracle),
        (5, "ensemble exactness", ensemble_exactness),
    ];
    for (n, name, f) in cheap {
        if wanted(n) {
            report(n, name, f());
        }
    }
    let desk = [
        (6, "stage-1 convergence"),
        (7, "stage-2 convergence"),
        (8, "directional result"),
        (9, "data-free audit"),
    ];
    if desk.iter().any(|(n, _)| wanted(*n)) {
        match desk_config().and_then(desk_run) {
            Ok(mut run) => {
                let checks: [fn(&mut DeskRun) -> Check; 4] =
                    [stage1_gate, stage2_gate, directional, audit];
                for ((n, name), f) in desk.into_iter().zip(checks) {
                    if wanted(n) {
                        report(n, name, f(&mut run));
                    }
                }
            }
            Err(e) => {
                for (n, name) in desk.into_iter().filter(|(n, _)| wanted(*n)) {
                    report(n, name, Err(format!("desk run failed: {e}")));
                }
            }
        }
    }
    if wanted(10) {
        report(10, "determinism", determinism());
    }
    if wanted(11) {
        report(11, "table arithmetic", table_arithmetic());
    }

    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, c)| c.is_err())
        .map(|(n, _)| *n)
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
