//! Stage 1: invert each frozen teacher into a labeled synthetic dataset.
//!
//! Images start as standard-normal noise (in the model's normalized input
//! space) and are optimized with Adam on
//! `CE(T(x̂), y) + λ1·prior(x̂) + λ2·moment(x̂)`, where the moment term is a
//! hinged distance between the batch's BN-input statistics and the
//! teacher's stored ones. The hinge margins are percentiles of the gaps
//! observed on pure noise.

mod augment;
mod dataset;
mod losses;
mod margins;

pub use augment::{augment_batch, AugmentPlan, AugmentPolicy};
pub use dataset::{
    load_synthetic, require_synthetic, save_synthetic, Provenance, SynthesisTrace, SyntheticDataset,
};
pub use losses::{
    image_prior_grad, image_prior_loss, moment_matching_loss, LayerMargin, RelaxationMargins,
};
pub use margins::{
    percentile, random_stat_gap_samples, relaxation_margins, standard_noise, GapSamples, LayerGaps,
};

pub(crate) use losses::{image_prior_with_grad, moment_matching_with_grad};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::digest::digest_of;
use crate::error::{Error, Result};
use crate::loss::cross_entropy;
use crate::models::{BnMode, BnStats, ClassifierSpec, Model, TeacherModel};
use crate::optim::{Adam, LrSchedule};
use crate::rng::{self, StageRng};
use crate::tensor::{Matrix, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    /// Weight of the image prior.
    pub lambda1: f64,
    /// Weight of the moment-matching term.
    pub lambda2: f64,
    pub tv_weight: f64,
    pub l2_weight: f64,
    /// Percentile (0–100) of the noise gaps used as relaxation margin.
    pub epsilon_ds: f64,
    /// Multiplier on the percentile margins; 1 keeps them as estimated.
    pub margin_scale: f64,
    /// Noise batches used to estimate the gap distribution.
    pub gap_batches: usize,
    pub steps_per_batch: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub num_images: usize,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            tv_weight: 1e-4,
            l2_weight: 1e-5,
            epsilon_ds: 95.0,
            margin_scale: 1.0,
            gap_batches: 32,
            steps_per_batch: 1000,
            learning_rate: 0.1,
            lr_schedule: LrSchedule::Cosine,
            batch_size: 64,
            num_images: 1024,
            augment: AugmentPolicy::digits(),
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda1, self.lambda2, self.tv_weight, self.l2_weight];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::config("inversion weights must be non-negative"));
        }
        if !(0.0..=100.0).contains(&self.epsilon_ds) {
            return Err(Error::config("epsilon_ds must lie in [0, 100]"));
        }
        if !(self.margin_scale >= 0.0 && self.margin_scale.is_finite()) {
            return Err(Error::config(
                "margin_scale must be finite and non-negative",
            ));
        }
        validate_synthesis(
            self.steps_per_batch,
            self.learning_rate,
            self.batch_size,
            self.num_images,
        )?;
        if self.gap_batches == 0 {
            return Err(Error::config("gap_batches must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn validate_synthesis(
    steps: usize,
    lr: f64,
    batch_size: usize,
    num_images: usize,
) -> Result<()> {
    if steps == 0 || batch_size == 0 || num_images == 0 || !(lr > 0.0) {
        return Err(Error::config(
            "synthesis needs steps, batch_size, num_images >= 1 and learning_rate > 0",
        ));
    }
    Ok(())
}

/// Unweighted components of a synthesis objective and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Sum of the classification losses of all teachers involved.
    pub classification: f64,
    pub prior: f64,
    pub moment: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.classification.is_finite()
            && self.prior.is_finite()
            && self.moment.is_finite()
            && self.total.is_finite()
    }
}

pub(crate) fn check_labels(labels: &[usize], images: &Tensor4, num_classes: usize) -> Result<()> {
    if labels.len() != images.n() {
        return Err(Error::input("one label per image is required"));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::input(format!(
            "label {bad} outside 0..{num_classes}"
        )));
    }
    Ok(())
}

/// Domain-specific inversion objective and its gradient w.r.t. `images`.
pub(crate) fn domain_inversion_objective(
    teacher: &TeacherModel,
    images: &Tensor4,
    labels: &[usize],
    margins: &RelaxationMargins,
    cfg: &InversionConfig,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Tensor4>)> {
    check_labels(labels, images, teacher.num_classes())?;
    let net = teacher.network();
    let trace = net.forward(images, BnMode::Eval)?;
    let (ce, grad_logits) = cross_entropy(&trace.logits, labels)?;
    let (moment, mut stat_grads) =
        moment_matching_with_grad(&trace.batch_stats(), &teacher.stored_bn_stats(), margins)?;
    let (prior, prior_grad) =
        image_prior_with_grad(images, cfg.tv_weight, cfg.l2_weight, want_grad);
    let breakdown = LossBreakdown {
        classification: ce,
        prior,
        moment,
        total: ce + cfg.lambda1 * prior + cfg.lambda2 * moment,
    };
    if !want_grad {
        return Ok((breakdown, None));
    }
    for g in stat_grads.iter_mut().flatten() {
        for v in g.d_mean.iter_mut().chain(g.d_var.iter_mut()) {
            *v *= cfg.lambda2;
        }
    }
    let mut g = net
        .backward(&trace, &grad_logits, &stat_grads, false, true)
        .input
        .expect("input gradient requested");
    let mut pg = prior_grad.expect("prior gradient requested");
    pg.scale(cfg.lambda1);
    g.add_assign(&pg);
    Ok((breakdown, Some(g)))
}

/// `CE(T(x̂), y) + λ1·prior(x̂) + λ2·moment(stats(T, x̂), stored(T), margins)`.
pub fn domain_inversion_loss(
    teacher: &TeacherModel,
    images: &Tensor4,
    labels: &[usize],
    margins: &RelaxationMargins,
    cfg: &InversionConfig,
) -> Result<LossBreakdown> {
    Ok(domain_inversion_objective(teacher, images, labels, margins, cfg, false)?.0)
}

/// [`domain_inversion_loss`] together with its gradient w.r.t. `images`.
pub fn domain_inversion_loss_grad(
    teacher: &TeacherModel,
    images: &Tensor4,
    labels: &[usize],
    margins: &RelaxationMargins,
    cfg: &InversionConfig,
) -> Result<(LossBreakdown, Tensor4)> {
    let (loss, g) = domain_inversion_objective(teacher, images, labels, margins, cfg, true)?;
    Ok((loss, g.expect("gradient requested")))
}

/// Moment-matching loss of `images` seen through `model` against `target`,
/// and its gradient w.r.t. the images.
pub fn moment_matching_input_grad(
    model: &impl Model,
    images: &Tensor4,
    target: &BnStats,
    margins: &RelaxationMargins,
) -> Result<(f64, Tensor4)> {
    let net = model.network();
    let trace = net.forward(images, BnMode::Eval)?;
    let (loss, stat_grads) = moment_matching_with_grad(&trace.batch_stats(), target, margins)?;
    let zero = Matrix::zeros(images.n(), net.spec().num_classes);
    let g = net
        .backward(&trace, &zero, &stat_grads, false, true)
        .input
        .expect("input gradient requested");
    Ok((loss, g))
}

/// Settings shared by both synthesis stages.
pub(crate) struct SynthesisPlan<'a> {
    pub spec: &'a ClassifierSpec,
    pub num_images: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub augment: &'a AugmentPolicy,
}

/// Batch-wise Adam optimization of noise images under `objective`, which
/// receives the augmented batch and returns the loss and its gradient.
pub(crate) fn optimize_images<F>(
    plan: &SynthesisPlan<'_>,
    rng: &mut StageRng,
    mut objective: F,
) -> Result<(Tensor4, Vec<usize>, SynthesisTrace)>
where
    F: FnMut(&Tensor4, &[usize]) -> Result<(LossBreakdown, Tensor4)>,
{
    let [c, h, w] = plan.spec.input_shape;
    plan.augment.validate(h, w)?;
    let k = plan.spec.num_classes;
    let mut parts = Vec::new();
    let mut labels = Vec::with_capacity(plan.num_images);
    let mut trace = SynthesisTrace::default();
    let mut done = 0;
    let mut batch_idx = 0;
    while done < plan.num_images {
        let m = plan.batch_size.min(plan.num_images - done);
        let y: Vec<usize> = (0..m).map(|_| rng.random_range(0..k)).collect();
        let mut x = standard_noise(plan.spec, m, rng);
        x.clamp_in_place(0.0, 1.0);
        let mut opt = Adam::new(x.data().len(), plan.learning_rate);
        let mut losses = Vec::with_capacity(plan.steps);
        for step in 0..plan.steps {
            opt.set_lr(plan.lr_schedule.rate(plan.learning_rate, step, plan.steps));
            let aug = AugmentPlan::sample(m, h, w, plan.augment, rng);
            let (loss, g_aug) = objective(&aug.apply(&x), &y)?;
            if !loss.is_finite() {
                return Err(Error::Synthesis {
                    batch: batch_idx,
                    step,
                    components: format!("{loss:?}"),
                });
            }
            losses.push(loss.total);
            let g = aug.backward(&g_aug);
            opt.step(x.data_mut(), g.data());
            x.clamp_in_place(0.0, 1.0);
        }
        tracing::debug!(
            batch = batch_idx,
            first = losses.first().copied().unwrap_or(f64::NAN),
            last = losses.last().copied().unwrap_or(f64::NAN),
            "synthesized batch"
        );
        trace.batches.push(losses);
        labels.extend(y);
        parts.push(x);
        done += m;
        batch_idx += 1;
    }
    let refs: Vec<&Tensor4> = parts.iter().collect();
    let mut images = Tensor4::concat(&refs)?;
    debug_assert_eq!(images.item_shape(), [c, h, w]);
    images.round_to_f32();
    Ok((images, labels, trace))
}

/// Runs Stage 1 for one teacher.
pub fn synthesize_domain_dataset(
    teacher: &TeacherModel,
    cfg: &InversionConfig,
) -> Result<(SyntheticDataset, SynthesisTrace)> {
    cfg.validate()?;
    let gaps = random_stat_gap_samples(
        teacher,
        cfg.gap_batches,
        cfg.batch_size,
        rng::derive_seed(cfg.seed, "gaps"),
    )?;
    let margins = relaxation_margins(&gaps, cfg.epsilon_ds)?.scaled(cfg.margin_scale);
    let spec = teacher.network().spec().clone();
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
        let (loss, g) = domain_inversion_objective(teacher, x, y, &margins, cfg, true)?;
        Ok((loss, g.expect("gradient requested")))
    })?;
    debug_assert_eq!(teacher.param_hash(), teacher.frozen_hash());
    Ok((
        SyntheticDataset {
            images,
            labels,
            provenance: Provenance::DomainSpecific {
                domain: teacher.domain_id(),
            },
            config_digest: digest_of(cfg),
            seed: cfg.seed,
            teacher_hashes: vec![teacher.frozen_hash().to_string()],
        },
        trace,
    ))
}
