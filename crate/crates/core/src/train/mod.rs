//! Experiment driver: the epoch loop, evaluation, checkpoints, curve output
//! and the finite-difference gradient check.

mod checkpoint;
mod curves;
mod gradcheck;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, RunMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use curves::{emit_curves, metrics_csv, METRICS_HEADER};
pub use gradcheck::{gradient_check, relative_error, GradCheckConfig, GradCheckReport, GroupError};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Model, ModelConfig};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{argmax, Rng};

/// Hyperparameters of one training run. Defaults: batch 128, 200 epochs,
/// SGD with lr 0.05 and decay 1e-5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub decay: f64,
    pub seed: u64,
    /// Keep only the first `n` training examples.
    pub limit_train: Option<usize>,
    /// Keep only the first `n` validation examples.
    pub limit_val: Option<usize>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 200,
            optimizer: OptimizerKind::Sgd,
            lr: 0.05,
            decay: 1e-5,
            seed: 0,
            limit_train: None,
            limit_val: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is accepted so that frozen-parameter runs stay expressible.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return Err(Error::config(format!(
                "decay must be finite and >= 0, got {}",
                self.decay
            )));
        }
        if self.limit_train == Some(0) || self.limit_val == Some(0) {
            return Err(Error::config("dataset limits must be >= 1"));
        }
        self.model.validate()
    }
}

/// One row of the metrics series. `train_*` are recomputed in eval mode over
/// the whole training set after the epoch's updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate in effect at the start of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Wall-clock time of the epoch including both evaluations. Not written
    /// to the metrics CSV so that the file stays reproducible.
    pub seconds: f64,
}

/// Loss, accuracy and confusion counts of a model on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean cross-entropy.
    pub loss: f64,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.confusion[i][i]).sum()
    }
}

/// Eval-mode loss, accuracy and confusion matrix. Batches are evaluated in
/// parallel and combined in batch order, so the result does not depend on
/// the worker count. The model is not modified.
pub fn evaluate(model: &Model<f32>, dataset: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let all: Vec<_> = batches::<f32>(dataset, batch_size, false, &mut Rng::seed(0))?.collect();
    let parts = all
        .par_iter()
        .map(|batch| {
            let logits = model.infer(&batch.images)?;
            let (loss, _) = softmax_cross_entropy(&logits, &batch.labels)?;
            let k = logits.shape()[1];
            let predicted: Vec<usize> = logits.data().chunks_exact(k).map(argmax).collect();
            Ok((f64::from(loss) * batch.labels.len() as f64, predicted))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut loss_sum = 0.0;
    for ((loss, predicted), batch) in parts.into_iter().zip(&all) {
        loss_sum += loss;
        for (&truth, &pred) in batch.labels.iter().zip(&predicted) {
            confusion[truth][pred] += 1;
        }
    }
    let n = dataset.len() as f64;
    let correct: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    Ok(Evaluation {
        loss: loss_sum / n,
        accuracy: correct as f64 / n,
        confusion,
    })
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub model: Model<f32>,
    pub checkpoint: Checkpoint,
    /// First epoch (1-based) in which a non-finite loss or gradient was seen.
    pub diverged_at: Option<usize>,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// [`train_with`] without a progress callback.
pub fn train(config: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome> {
    train_with(config, train_set, val_set, |_| {})
}

/// Runs `config.epochs` epochs of mini-batch training. `on_epoch` sees each
/// metrics row as soon as it is complete.
///
/// A batch whose loss or gradient is not finite marks the run diverged and
/// its update is skipped; training and recording continue.
pub fn train_with(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_set = limited(train_set, config.limit_train);
    let val_set = limited(val_set, config.limit_val);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut rng = Rng::seed(config.seed);
    let mut model = Model::<f32>::build(&config.model, &mut rng)?;
    let mut optimizer = Optimizer::<f32>::new(config.optimizer, config.lr, config.decay)?;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut diverged_at = None;

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let lr = optimizer.current_lr();
        for batch in batches::<f32>(&train_set, config.batch_size, true, &mut rng)? {
            model.zero_grad();
            let logits = model.forward(&batch.images, &mut rng)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
            if !loss.is_finite() {
                model.clear_caches();
                diverged_at.get_or_insert(epoch);
                continue;
            }
            model.backward(&dlogits)?;
            match optimizer.step(&mut model.params_mut()) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { .. }) => {
                    diverged_at.get_or_insert(epoch);
                }
                Err(e) => return Err(e),
            }
        }
        let train_eval = evaluate(&model, &train_set, config.batch_size)?;
        let val_eval = evaluate(&model, &val_set, config.batch_size)?;
        let row = EpochMetrics {
            epoch,
            lr,
            train_loss: train_eval.loss,
            train_acc: train_eval.accuracy,
            val_loss: val_eval.loss,
            val_acc: val_eval.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        metrics.push(row);
    }
    model.zero_grad();

    let checkpoint = Checkpoint::capture(
        &model,
        &optimizer,
        &rng,
        RunMeta {
            epoch: config.epochs,
            train: Some(config.clone()),
            diverged_at,
        },
    );
    Ok(TrainOutcome {
        metrics,
        model,
        checkpoint,
        diverged_at,
    })
}

fn limited(ds: &Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) => ds.truncated(n),
        None => ds.clone(),
    }
}
