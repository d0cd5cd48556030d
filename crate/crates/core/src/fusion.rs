//! Stage 2: cross-domain images recognizable by two teachers.
//!
//! For an ordered pair `(a, b)`, teacher `a` is run over the Stage-1 data
//! of domain `b`; the resulting BN-input moments become the moment
//! targets. New images are optimized to be classified as their label by
//! both teachers while matching those targets through teacher `a`.

use serde::{Deserialize, Serialize};

use crate::digest::digest_of;
use crate::error::{Error, Result};
use crate::inversion::{
    check_labels, image_prior_with_grad, moment_matching_with_grad, optimize_images,
    relaxation_margins, require_synthetic, validate_synthesis, AugmentPolicy, GapSamples,
    LossBreakdown, Provenance, RelaxationMargins, SynthesisPlan, SynthesisTrace, SyntheticDataset,
};
use crate::loss::cross_entropy;
use crate::models::{capture_batch_bn_stats, BnMode, BnStats, LayerStats, Model, TeacherModel};
use crate::optim::LrSchedule;
use crate::rng;
use crate::tensor::Tensor4;

/// Moment targets and margins of teacher `a` on domain `b`'s synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainTargets {
    pub source_model_domain: usize,
    pub data_domain: usize,
    pub targets: BnStats,
    pub margins: RelaxationMargins,
    /// Per-batch gaps between teacher `a`'s stored statistics and the
    /// statistics of each batch of domain `b` data.
    pub gap_samples: GapSamples,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub tv_weight: f64,
    pub l2_weight: f64,
    pub epsilon_cd: f64,
    pub steps_per_batch: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub num_images: usize,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            tv_weight: 1e-4,
            l2_weight: 1e-5,
            epsilon_cd: 95.0,
            steps_per_batch: 1000,
            learning_rate: 0.1,
            lr_schedule: LrSchedule::Cosine,
            batch_size: 64,
            num_images: 512,
            augment: AugmentPolicy::digits(),
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha1, self.alpha2, self.tv_weight, self.l2_weight];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config("fusion weights must be non-negative"));
        }
        if !(0.0..=100.0).contains(&self.epsilon_cd) {
            return Err(Error::config("epsilon_cd must lie in [0, 100]"));
        }
        validate_synthesis(
            self.steps_per_batch,
            self.learning_rate,
            self.batch_size,
            self.num_images,
        )
    }
}

/// Streams `dataset_b` through `teacher_a` in batches of `batch_size`.
///
/// Targets are the whole-dataset mean and population variance (combined
/// across batches with the law of total variance); margins are the
/// `epsilon_cd` percentile of the per-batch gaps to `a`'s stored statistics.
pub fn compute_cross_domain_targets(
    teacher_a: &TeacherModel,
    dataset_b: &SyntheticDataset,
    batch_size: usize,
    epsilon_cd: f64,
) -> Result<CrossDomainTargets> {
    require_synthetic(&dataset_b.provenance, "cross-domain target computation")?;
    let b = match dataset_b.provenance {
        Provenance::DomainSpecific { domain } => domain,
        other => {
            return Err(Error::input(format!(
                "cross-domain targets need domain-specific data, got {}",
                other.tag()
            )))
        }
    };
    let a = teacher_a.domain_id();
    if a == b {
        return Err(Error::input(format!("teacher and data share domain {a}")));
    }
    if dataset_b.is_empty() {
        return Err(Error::input("empty domain-specific dataset"));
    }
    if batch_size == 0 {
        return Err(Error::input("batch_size must be at least 1"));
    }
    let stored = teacher_a.stored_bn_stats();
    let mut gaps = GapSamples::empty_like(&stored);
    let mut per_batch: Vec<(usize, BnStats)> = Vec::new();
    let n = dataset_b.len();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        let stats = capture_batch_bn_stats(teacher_a, &dataset_b.images.slice(start..end))?;
        gaps.record(&stats, &stored)?;
        per_batch.push((end - start, stats));
        start = end;
    }

    let total = n as f64;
    let layers = stored
        .layers
        .iter()
        .enumerate()
        .map(|(l, ref_layer)| {
            let c = ref_layer.mean.len();
            let mut mean = vec![0.0; c];
            for (cnt, s) in &per_batch {
                for (m, v) in mean.iter_mut().zip(&s.layers[l].mean) {
                    *m += *cnt as f64 * v;
                }
            }
            for m in &mut mean {
                *m /= total;
            }
            let mut var = vec![0.0; c];
            for (cnt, s) in &per_batch {
                let sl = &s.layers[l];
                for ch in 0..c {
                    let d = sl.mean[ch] - mean[ch];
                    var[ch] += *cnt as f64 * (sl.var[ch] + d * d);
                }
            }
            for v in &mut var {
                *v /= total;
            }
            LayerStats {
                layer_id: ref_layer.layer_id,
                mean,
                var,
            }
        })
        .collect();
    let margins = relaxation_margins(&gaps, epsilon_cd)?;
    Ok(CrossDomainTargets {
        source_model_domain: a,
        data_domain: b,
        targets: BnStats { layers },
        margins,
        gap_samples: gaps,
    })
}

fn cross_domain_objective(
    teacher_a: &TeacherModel,
    teacher_b: &TeacherModel,
    images: &Tensor4,
    labels: &[usize],
    cdt: &CrossDomainTargets,
    cfg: &FusionConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Tensor4>)> {
    if cdt.source_model_domain != teacher_a.domain_id() {
        return Err(Error::input(format!(
            "targets were computed for teacher {}, not {}",
            cdt.source_model_domain,
            teacher_a.domain_id()
        )));
    }
    if teacher_a.num_classes() != teacher_b.num_classes() {
        return Err(Error::input("teachers disagree on the label space"));
    }
    check_labels(labels, images, teacher_a.num_classes())?;

    let net_a = teacher_a.network();
    let trace_a = net_a.forward(images, BnMode::Eval)?;
    let (ce_a, gl_a) = cross_entropy(&trace_a.logits, labels)?;
    let (moment, mut stat_grads) =
        moment_matching_with_grad(&trace_a.batch_stats(), &cdt.targets, &cdt.margins)?;

    let net_b = teacher_b.network();
    let trace_b = net_b.forward(images, BnMode::Eval)?;
    let (ce_b, gl_b) = cross_entropy(&trace_b.logits, labels)?;

    let (prior, prior_grad) =
        image_prior_with_grad(images, cfg.tv_weight, cfg.l2_weight, want_grad);
    let breakdown = LossBreakdown {
        classification: ce_a + ce_b,
        prior,
        moment,
        total: ce_a + ce_b + cfg.alpha1 * prior + cfg.alpha2 * moment,
    };
    if !want_grad {
        return Ok((breakdown, None));
    }
    for g in stat_grads.iter_mut().flatten() {
        for v in g.d_mean.iter_mut().chain(g.d_var.iter_mut()) {
            *v *= cfg.alpha2;
        }
    }
    let mut g = net_a
        .backward(&trace_a, &gl_a, &stat_grads, false, true)
        .input
        .expect("input gradient requested");
    g.add_assign(
        &net_b
            .backward(&trace_b, &gl_b, &[], false, true)
            .input
            .expect("input gradient requested"),
    );
    let mut pg = prior_grad.expect("prior gradient requested");
    pg.scale(cfg.alpha1);
    g.add_assign(&pg);
    Ok((breakdown, Some(g)))
}

/// `CE(T_a(x̂), y) + CE(T_b(x̂), y) + α1·prior(x̂) + α2·moment(stats(T_a, x̂), targets, margins)`.
pub fn cross_domain_loss(
    teacher_a: &TeacherModel,
    teacher_b: &TeacherModel,
    images: &Tensor4,
    labels: &[usize],
    cdt: &CrossDomainTargets,
    cfg: &FusionConfig,
) -> Result<LossBreakdown> {
    Ok(cross_domain_objective(teacher_a, teacher_b, images, labels, cdt, cfg, false)?.0)
}

/// Gradient of [`cross_domain_loss`] w.r.t. `images`.
pub fn cross_domain_loss_grad(
    teacher_a: &TeacherModel,
    teacher_b: &TeacherModel,
    images: &Tensor4,
    labels: &[usize],
    cdt: &CrossDomainTargets,
    cfg: &FusionConfig,
) -> Result<Tensor4> {
    let (_, g) = cross_domain_objective(teacher_a, teacher_b, images, labels, cdt, cfg, true)?;
    Ok(g.expect("gradient requested"))
}

/// Runs Stage 2 for the ordered pair `(teacher_a, teacher_b)`.
pub fn synthesize_cross_domain_dataset(
    teacher_a: &TeacherModel,
    teacher_b: &TeacherModel,
    dataset_b: &SyntheticDataset,
    cfg: &FusionConfig,
) -> Result<(SyntheticDataset, SynthesisTrace, CrossDomainTargets)> {
    cfg.validate()?;
    let b = teacher_b.domain_id();
    if dataset_b.provenance != (Provenance::DomainSpecific { domain: b }) {
        return Err(Error::input(format!(
            "dataset {} was not synthesized from teacher {b}",
            dataset_b.provenance.tag()
        )));
    }
    let cdt = compute_cross_domain_targets(teacher_a, dataset_b, cfg.batch_size, cfg.epsilon_cd)?;
    let spec = teacher_a.network().spec().clone();
    if teacher_b.network().spec() != &spec {
        return Err(Error::input("teachers must share one architecture"));
    }
    let plan = SynthesisPlan {
        spec: &spec,
        num_images: cfg.num_images,
        batch_size: cfg.batch_size,
        steps: cfg.steps_per_batch,
        learning_rate: cfg.learning_rate,
        lr_schedule: cfg.lr_schedule,
        augment: &cfg.augment,
    };
    let mut r = rng::substream(cfg.seed, "images");
    let (images, labels, trace) = optimize_images(&plan, &mut r, |x, y| {
        let (loss, g) = cross_domain_objective(teacher_a, teacher_b, x, y, &cdt, cfg, true)?;
        Ok((loss, g.expect("gradient requested")))
    })?;
    let ds = SyntheticDataset {
        images,
        labels,
        provenance: Provenance::CrossDomain {
            a: teacher_a.domain_id(),
            b,
        },
        config_digest: digest_of(cfg),
        seed: cfg.seed,
        teacher_hashes: vec![
            teacher_a.frozen_hash().to_string(),
            teacher_b.frozen_hash().to_string(),
        ],
    };
    Ok((ds, trace, cdt))
}
