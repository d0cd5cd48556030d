//! Stage 3: distill every teacher into one student using the synthetic data.
//!
//! Each synthetic image carries its provenance. A domain-specific image is
//! soft-labeled by its own teacher; a cross-domain image by the mean of
//! the two teachers' predictions. The student minimizes a KL divergence
//! to those soft labels.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::{require_synthetic, Provenance, SyntheticDataset};
use crate::models::training::{shuffled_batches, LossTrace};
use crate::models::{load_checkpoint, BnMode, Classifier, Model, StudentModel, TeacherModel};
use crate::optim::Adam;
use crate::rng;
use crate::tensor::{Matrix, Tensor4};

const PROB_FLOOR: f64 = 1e-8;

/// Argument order of the KL divergence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(student ‖ target)`.
    #[default]
    StudentFirst,
    /// `KL(target ‖ student)`, the usual distillation form.
    TeacherFirst,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudentInit {
    #[default]
    Random,
    /// Start from a checkpoint written by `save_checkpoint`.
    PretrainedCheckpoint { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub kl_direction: KlDirection,
    pub student_init: StudentInit,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            batch_size: 128,
            temperature: 1.0,
            kl_direction: KlDirection::StudentFirst,
            student_init: StudentInit::Random,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config(
                "distillation needs epochs >= 1 and batch_size >= 1",
            ));
        }
        if !(self.temperature > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "temperature and learning_rate must be positive",
            ));
        }
        Ok(())
    }
}

fn find_teacher(teachers: &[TeacherModel], domain: usize) -> Result<&TeacherModel> {
    teachers
        .iter()
        .find(|t| t.domain_id() == domain)
        .ok_or_else(|| Error::input(format!("no teacher for domain {domain}")))
}

/// Soft labels for a batch that shares one provenance.
pub fn soft_target(
    batch: &Tensor4,
    provenance: &Provenance,
    teachers: &[TeacherModel],
    temperature: f64,
) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    require_synthetic(provenance, "soft-target computation")?;
    match *provenance {
        Provenance::DomainSpecific { domain } => Ok(find_teacher(teachers, domain)?
            .network()
            .predict_logits(batch)?
            .softmax(temperature)),
        Provenance::CrossDomain { a, b } => {
            let pa = find_teacher(teachers, a)?
                .network()
                .predict_logits(batch)?
                .softmax(temperature);
            let pb = find_teacher(teachers, b)?
                .network()
                .predict_logits(batch)?
                .softmax(temperature);
            if pa.cols() != pb.cols() {
                return Err(Error::input("paired teachers disagree on the label space"));
            }
            let data = pa
                .data()
                .iter()
                .zip(pb.data())
                .map(|(x, y)| 0.5 * (x + y))
                .collect();
            Matrix::from_vec(pa.rows(), pa.cols(), data)
        }
        Provenance::Original { .. } => unreachable!("rejected by require_synthetic"),
    }
}

fn check_stochastic(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|p| !(*p >= -1e-12)) || (s - 1.0).abs() > 1e-6 {
            return Err(Error::input(format!(
                "{what} row {i} is not a distribution"
            )));
        }
    }
    Ok(())
}

fn floored(row: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = row.iter().map(|p| p.max(PROB_FLOOR)).collect();
    let z: f64 = v.iter().sum();
    v.into_iter().map(|p| p / z).collect()
}

/// Batch-mean KL divergence between row distributions, in `direction`.
/// Both sides are floored at 1e-8 and renormalized before taking logs.
pub fn kd_loss(
    student_probs: &Matrix,
    target_probs: &Matrix,
    direction: KlDirection,
) -> Result<f64> {
    if student_probs.rows() != target_probs.rows() || student_probs.cols() != target_probs.cols() {
        return Err(Error::input("student and target shapes differ"));
    }
    if student_probs.rows() == 0 {
        return Err(Error::input("empty batch"));
    }
    check_stochastic(student_probs, "student")?;
    check_stochastic(target_probs, "target")?;
    let mut total = 0.0;
    for (s, p) in student_probs.iter_rows().zip(target_probs.iter_rows()) {
        let (s, p) = (floored(s), floored(p));
        let (x, y) = match direction {
            KlDirection::StudentFirst => (&s, &p),
            KlDirection::TeacherFirst => (&p, &s),
        };
        total += x.iter().zip(y).map(|(a, b)| a * (a / b).ln()).sum::<f64>();
    }
    Ok(total / student_probs.rows() as f64)
}

/// [`kd_loss`] of `softmax(student_logits / temperature)` and its gradient
/// with respect to the logits.
pub fn kd_loss_with_logit_grad(
    student_logits: &Matrix,
    target_probs: &Matrix,
    temperature: f64,
    direction: KlDirection,
) -> Result<(f64, Matrix)> {
    let s = student_logits.softmax(temperature);
    let loss = kd_loss(&s, target_probs, direction)?;
    let (n, k) = (s.rows(), s.cols());
    let mut grad = Matrix::zeros(n, k);
    for i in 0..n {
        let (si, pi) = (s.row(i), target_probs.row(i));
        let (st, pt) = (floored(si), floored(pi));
        // d/d(renormalized student)
        let g_tilde: Vec<f64> = match direction {
            KlDirection::StudentFirst => st
                .iter()
                .zip(&pt)
                .map(|(a, b)| (a / b).ln() + 1.0)
                .collect(),
            KlDirection::TeacherFirst => st.iter().zip(&pt).map(|(a, b)| -b / a).collect(),
        };
        // through renormalization and the floor
        let z: f64 = si.iter().map(|p| p.max(PROB_FLOOR)).sum();
        let dot: f64 = g_tilde.iter().zip(&st).map(|(g, t)| g * t).sum();
        let g_s: Vec<f64> = (0..k)
            .map(|j| {
                if si[j] > PROB_FLOOR {
                    (g_tilde[j] - dot) / z
                } else {
                    0.0
                }
            })
            .collect();
        // through the tempered softmax
        let inner: f64 = g_s.iter().zip(si).map(|(g, p)| g * p).sum();
        let row = grad.row_mut(i);
        for j in 0..k {
            row[j] = si[j] * (g_s[j] - inner) / (temperature * n as f64);
        }
    }
    Ok((loss, grad))
}

/// Union of synthetic datasets with each example's soft target attached.
struct DistillSet {
    images: Tensor4,
    targets: Matrix,
}

fn build_distill_set(
    teachers: &[TeacherModel],
    datasets: &[SyntheticDataset],
    temperature: f64,
) -> Result<DistillSet> {
    let parts: Vec<&SyntheticDataset> = datasets.iter().filter(|d| !d.is_empty()).collect();
    if parts.is_empty() {
        return Err(Error::config("the synthetic dataset union is empty"));
    }
    let mut targets: Option<Matrix> = None;
    for d in &parts {
        require_synthetic(&d.provenance, "distillation")?;
        let t = soft_target(&d.images, &d.provenance, teachers, temperature)?;
        match targets.as_mut() {
            Some(m) => m.append_rows(&t),
            None => targets = Some(t),
        }
    }
    let images: Vec<&Tensor4> = parts.iter().map(|d| &d.images).collect();
    Ok(DistillSet {
        images: Tensor4::concat(&images)?,
        targets: targets.expect("at least one part"),
    })
}

/// Trains a student on the concatenation of `datasets`.
///
/// The student shares the teachers' architecture. Teachers are only read.
pub fn train_student(
    teachers: &[TeacherModel],
    datasets: &[SyntheticDataset],
    cfg: &DistillConfig,
) -> Result<(StudentModel, LossTrace)> {
    cfg.validate()?;
    let first = teachers
        .first()
        .ok_or_else(|| Error::config("distillation needs at least one teacher"))?;
    let spec = first.network().spec().clone();
    let set = build_distill_set(teachers, datasets, cfg.temperature)?;
    if set.images.item_shape() != spec.input_shape {
        return Err(Error::input(
            "synthetic images do not match the teacher input shape",
        ));
    }

    let mut r = rng::substream(cfg.seed, "distill");
    let mut student = match &cfg.student_init {
        StudentInit::Random => Classifier::new(spec.clone(), &mut r)?,
        StudentInit::PretrainedCheckpoint { path } => {
            let (net, _) = load_checkpoint(path)?;
            if net.spec() != &spec {
                return Err(Error::config(format!(
                    "pretrained student at {} has a different architecture",
                    path.display()
                )));
            }
            net
        }
    };
    let mut opt = Adam::new(student.params().len(), cfg.learning_rate);
    let mut trace = LossTrace::default();
    let n = set.images.n();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let mut seen = 0;
        for batch in shuffled_batches(n, cfg.batch_size, &mut r) {
            if batch.len() < 2 {
                continue;
            }
            let x = set.images.select(&batch);
            let rows: Vec<Vec<f64>> = batch.iter().map(|&i| set.targets.row(i).to_vec()).collect();
            let p = Matrix::from_rows(&rows)?;
            let t = student.forward(&x, BnMode::Train)?;
            let (loss, g) =
                kd_loss_with_logit_grad(&t.logits, &p, cfg.temperature, cfg.kl_direction)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite distillation loss at epoch {epoch}"
                )));
            }
            total += loss * batch.len() as f64;
            seen += batch.len();
            let grads = student.backward(&t, &g, &[], true, false);
            student.update_running(&t);
            opt.step(student.params_mut(), &grads.params.expect("requested"));
        }
        let mean = if seen > 0 {
            total / seen as f64
        } else {
            f64::NAN
        };
        tracing::debug!(epoch, loss = mean, "distillation epoch");
        trace.epochs.push((epoch, mean));
    }
    Ok((student, trace))
}
