//! Plain supervised cross-entropy training (teachers and the ERM baseline).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{BnMode, Classifier};
use super::spec::ClassifierSpec;
use crate::error::{Error, Result};
use crate::loss::cross_entropy;
use crate::optim::Adam;
use crate::rng::StageRng;
use crate::tensor::Tensor4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            learning_rate: 2e-3,
            batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::config(
                "training needs epochs >= 1, batch_size >= 1 and learning_rate > 0",
            ));
        }
        Ok(())
    }
}

/// Mean loss per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epochs: Vec<(usize, f64)>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in &self.epochs {
            s.push_str(&format!("{e},{l}\n"));
        }
        s
    }
}

/// Shuffled mini-batch index lists covering `0..n` once.
pub(crate) fn shuffled_batches(n: usize, batch: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch).map(<[usize]>::to_vec).collect()
}

/// Trains a fresh classifier by minimizing cross-entropy with Adam.
pub fn train_supervised(
    spec: &ClassifierSpec,
    images: &Tensor4,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut StageRng,
) -> Result<(Classifier, LossTrace)> {
    cfg.validate()?;
    if images.n() == 0 || images.n() != labels.len() {
        return Err(Error::input(
            "training set is empty or labels do not match images",
        ));
    }
    let mut net = Classifier::new(spec.clone(), rng)?;
    let mut opt = Adam::new(net.params().len(), cfg.learning_rate);
    let mut trace = LossTrace::default();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in shuffled_batches(images.n(), cfg.batch_size, rng) {
            // a single-example batch has zero BN variance in train mode
            if batch.len() < 2 {
                continue;
            }
            let x = images.select(&batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let t = net.forward(&x, BnMode::Train)?;
            let (loss, grad) = cross_entropy(&t.logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {epoch}"
                )));
            }
            total += loss * batch.len() as f64;
            let g = net.backward(&t, &grad, &[], true, false);
            net.update_running(&t);
            opt.step(net.params_mut(), &g.params.expect("requested"));
        }
        trace.epochs.push((epoch, total / images.n() as f64));
    }
    Ok((net, trace))
}
