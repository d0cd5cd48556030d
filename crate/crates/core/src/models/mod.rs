//! Classifier architecture, frozen teachers, BN statistic capture and checkpoints.

mod checkpoint;
mod network;
mod spec;
mod stats;
pub mod training;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CheckpointMeta};
pub use network::{BnMode, Classifier, Gradients, Trace};
pub use spec::{BlockGeometry, ClassifierSpec};
pub use stats::{BnStats, LayerStats, StatGrad};

use crate::error::Result;
use crate::tensor::{Matrix, Tensor4};

/// Anything that evaluates through a [`Classifier`].
pub trait Model {
    fn network(&self) -> &Classifier;
}

impl Model for Classifier {
    fn network(&self) -> &Classifier {
        self
    }
}

/// A student is a plain trainable classifier.
pub type StudentModel = Classifier;

/// A frozen per-domain classifier.
///
/// The wrapped network is never handed out mutably, so parameters and
/// stored statistics cannot change after construction.
#[derive(Clone, Debug)]
pub struct TeacherModel {
    net: Classifier,
    domain_id: usize,
    training_seed: u64,
    frozen_hash: String,
}

impl TeacherModel {
    pub fn new(net: Classifier, domain_id: usize, training_seed: u64) -> Self {
        let frozen_hash = net.param_hash();
        Self {
            net,
            domain_id,
            training_seed,
            frozen_hash,
        }
    }

    pub fn domain_id(&self) -> usize {
        self.domain_id
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    /// Hash recorded at construction.
    pub fn frozen_hash(&self) -> &str {
        &self.frozen_hash
    }

    /// Recomputes the parameter hash; equals [`Self::frozen_hash`] for the
    /// whole lifetime of the value.
    pub fn param_hash(&self) -> String {
        self.net.param_hash()
    }

    pub fn stored_bn_stats(&self) -> BnStats {
        self.net.stored_bn_stats()
    }

    pub fn num_classes(&self) -> usize {
        self.net.spec().num_classes
    }
}

impl Model for TeacherModel {
    fn network(&self) -> &Classifier {
        &self.net
    }
}

/// Evaluation-mode logits, `N×K`.
pub fn forward_logits(model: &impl Model, batch: &Tensor4) -> Result<Matrix> {
    model.network().predict_logits(batch)
}

/// Per-channel mean and population variance at each BN layer's input.
///
/// Runs in evaluation mode, so the model's stored statistics are untouched.
pub fn capture_batch_bn_stats(model: &impl Model, batch: &Tensor4) -> Result<BnStats> {
    let trace = model.network().forward(batch, BnMode::Eval)?;
    Ok(trace.batch_stats())
}

/// Small architecture used by unit tests across the crate.
#[cfg(test)]
pub(crate) fn toy_spec() -> ClassifierSpec {
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
