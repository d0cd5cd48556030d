//! Comparison methods: prediction ensembles, the BestTeacher oracle,
//! Multi-DI (Stages 1 and 3 only) and pooled ERM on original data.

use serde::{Deserialize, Serialize};

use crate::distillation::{train_student, DistillConfig};
use crate::domain_bench::LabeledImages;
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, Predictor};
use crate::inversion::{
    synthesize_domain_dataset, InversionConfig, SynthesisTrace, SyntheticDataset,
};
use crate::models::training::{train_supervised, LossTrace, TrainConfig};
use crate::models::{Classifier, ClassifierSpec, StudentModel, TeacherModel};
use crate::rng;
use crate::tensor::{Matrix, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    AvgPred,
    HighestConf,
}

/// A label-free combination of frozen teachers.
#[derive(Clone, Debug)]
pub struct EnsembleMethod {
    pub kind: EnsembleKind,
    teachers: Vec<TeacherModel>,
}

impl EnsembleMethod {
    pub fn new(kind: EnsembleKind, teachers: Vec<TeacherModel>) -> Result<Self> {
        check_teachers(&teachers)?;
        Ok(Self { kind, teachers })
    }

    pub fn teachers(&self) -> &[TeacherModel] {
        &self.teachers
    }
}

impl Predictor for EnsembleMethod {
    fn predict_proba(&self, images: &Tensor4) -> Result<Matrix> {
        match self.kind {
            EnsembleKind::AvgPred => avg_pred(&self.teachers, images),
            EnsembleKind::HighestConf => highest_conf(&self.teachers, images),
        }
    }
}

fn check_teachers(teachers: &[TeacherModel]) -> Result<()> {
    let first = teachers
        .first()
        .ok_or_else(|| Error::config("an ensemble needs at least one teacher"))?;
    if teachers
        .iter()
        .any(|t| t.num_classes() != first.num_classes())
    {
        return Err(Error::config(
            "ensemble teachers disagree on the label space",
        ));
    }
    Ok(())
}

fn check_shapes(probs: &[Matrix]) -> Result<&Matrix> {
    let first = probs
        .first()
        .ok_or_else(|| Error::config("no predictions to combine"))?;
    if probs
        .iter()
        .any(|p| p.rows() != first.rows() || p.cols() != first.cols())
    {
        return Err(Error::input("prediction matrices differ in shape"));
    }
    Ok(first)
}

fn teacher_probs(teachers: &[TeacherModel], batch: &Tensor4) -> Result<Vec<Matrix>> {
    check_teachers(teachers)?;
    teachers.iter().map(|t| t.predict_proba(batch)).collect()
}

/// Mean of the teachers' softmax rows.
pub fn avg_pred(teachers: &[TeacherModel], batch: &Tensor4) -> Result<Matrix> {
    average_probabilities(&teacher_probs(teachers, batch)?)
}

/// Element-wise mean of equally shaped probability matrices.
pub fn average_probabilities(probs: &[Matrix]) -> Result<Matrix> {
    let first = check_shapes(probs)?;
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for p in probs {
        for (o, v) in out.data_mut().iter_mut().zip(p.data()) {
            *o += v;
        }
    }
    let k = probs.len() as f64;
    out.data_mut().iter_mut().for_each(|v| *v /= k);
    Ok(out)
}

/// Natural-log entropy with `p·ln(max(p, 1e-12))` for stability.
pub fn entropy(row: &[f64]) -> f64 {
    -row.iter().map(|&p| p * p.max(1e-12).ln()).sum::<f64>()
}

/// Per example, the softmax row of the teacher with the lowest entropy;
/// ties go to the lowest teacher index.
pub fn highest_conf(teachers: &[TeacherModel], batch: &Tensor4) -> Result<Matrix> {
    most_confident(&teacher_probs(teachers, batch)?)
}

/// Row-wise pick of the lowest-entropy matrix (ties to the lowest index).
pub fn most_confident(probs: &[Matrix]) -> Result<Matrix> {
    let first = check_shapes(probs)?;
    let mut out = Matrix::zeros(first.rows(), first.cols());
    for i in 0..first.rows() {
        let mut best = 0;
        let mut best_h = entropy(first.row(i));
        for (t, p) in probs.iter().enumerate().skip(1) {
            let h = entropy(p.row(i));
            if h < best_h {
                best = t;
                best_h = h;
            }
        }
        out.row_mut(i).copy_from_slice(probs[best].row(i));
    }
    Ok(out)
}

/// Index of the teacher with the highest accuracy on the target's
/// validation split (ties to the lowest index). This peeks at target labels
/// and is reported as an oracle.
pub fn best_teacher_oracle(
    teachers: &[TeacherModel],
    target_val: &LabeledImages,
) -> Result<(usize, Vec<f64>)> {
    check_teachers(teachers)?;
    if target_val.is_empty() {
        return Err(Error::input("empty target validation split"));
    }
    let accs = teachers
        .iter()
        .map(|t| accuracy(t, target_val))
        .collect::<Result<Vec<f64>>>()?;
    Ok((argmax_first(&accs), accs))
}

pub(crate) fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-teacher inversion config: the root seed is split by domain so each
/// teacher gets its own stream regardless of which other teachers run.
pub fn inversion_config_for(cfg: &InversionConfig, domain: usize) -> InversionConfig {
    InversionConfig {
        seed: rng::derive_seed(cfg.seed, &format!("invert.{domain}")),
        ..cfg.clone()
    }
}

/// Stage-1 synthesis for every teacher.
pub fn invert_all(
    teachers: &[TeacherModel],
    cfg: &InversionConfig,
) -> Result<Vec<(SyntheticDataset, SynthesisTrace)>> {
    teachers
        .iter()
        .map(|t| synthesize_domain_dataset(t, &inversion_config_for(cfg, t.domain_id())))
        .collect()
}

pub struct MultiDiOutput {
    pub student: StudentModel,
    pub trace: LossTrace,
    pub datasets: Vec<SyntheticDataset>,
}

/// Stage 1 for every teacher followed by distillation on the
/// domain-specific data alone.
pub fn run_multi_di(
    teachers: &[TeacherModel],
    inversion: &InversionConfig,
    distill: &DistillConfig,
) -> Result<MultiDiOutput> {
    let datasets: Vec<SyntheticDataset> = invert_all(teachers, inversion)?
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    let (student, trace) = train_student(teachers, &datasets, distill)?;
    Ok(MultiDiOutput {
        student,
        trace,
        datasets,
    })
}

/// Cross-entropy training on the pooled original source training sets.
/// Not data-free: the upper bound.
pub fn train_erm(
    sources: &[&LabeledImages],
    spec: &ClassifierSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Classifier, LossTrace)> {
    if sources.is_empty() {
        return Err(Error::config("ERM needs at least one source domain"));
    }
    let pooled = LabeledImages::concat(sources)?;
    let mut r = rng::substream(seed, "erm");
    train_supervised(spec, &pooled.images, &pooled.labels, cfg, &mut r)
}
