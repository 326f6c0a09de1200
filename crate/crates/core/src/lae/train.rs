use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState};

/// Optimizer schedule shared by both training stages.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub adam: AdamConfig,
    /// Factor applied to the learning rate after every `lr_patience`
    /// epochs without validation improvement; 1 keeps it constant.
    pub lr_decay: f64,
    pub lr_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 128,
            patience: 20,
            min_delta: 1e-5,
            adam: AdamConfig::default(),
            lr_decay: 1.0,
            lr_patience: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Power-iteration calls that hit their iteration cap.
    pub power_iteration_warnings: usize,
    pub final_lr: f64,
    /// Best validation loss of every Stage I initialization tried.
    pub restart_val_losses: Vec<f64>,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

pub(crate) trait Objective {
    type Snapshot;

    fn n_train(&self) -> usize;
    fn param_sizes(&self) -> Vec<usize>;
    /// Mean loss over the batch rows and its gradient tensors.
    fn loss_grad(&mut self, rows: &[usize]) -> Result<(f64, Vec<Vec<f64>>)>;
    fn apply(&mut self, adam: &mut AdamState, grads: &[Vec<f64>]) -> Result<()>;
    fn validation_loss(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
    fn restore(&mut self, snapshot: Self::Snapshot);
}

/// Mini-batch Adam with per-epoch reshuffling and early stopping on the
/// validation loss; the best parameters are restored on return.
pub(crate) fn fit<O: Objective, R: Rng + ?Sized>(
    obj: &mut O,
    cfg: &TrainConfig,
    stage: &'static str,
    rng: &mut R,
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be positive".into()));
    }
    if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
        return Err(Error::InvalidParameter(alloc::format!("lr_decay {}", cfg.lr_decay)));
    }
    let n = obj.n_train();
    if n == 0 {
        return Err(Error::InvalidParameter("empty training set".into()));
    }
    let mut adam = AdamState::new(cfg.adam, &obj.param_sizes());
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport {
        best_val_loss: f64::INFINITY,
        ..TrainReport::default()
    };
    let mut best = obj.snapshot();
    let mut since_best = 0usize;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = obj.loss_grad(chunk)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { stage, epoch, loss });
            }
            sum += loss * chunk.len() as f64;
            obj.apply(&mut adam, &grads)?;
        }
        let val = obj.validation_loss()?;
        if !val.is_finite() {
            return Err(Error::Diverged { stage, epoch, loss: val });
        }
        report.train_loss.push(sum / n as f64);
        report.val_loss.push(val);
        if val < report.best_val_loss - cfg.min_delta {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best = obj.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
            if cfg.lr_decay < 1.0 && cfg.lr_patience > 0 && since_best % cfg.lr_patience == 0 {
                adam.config.lr *= cfg.lr_decay;
            }
        }
    }
    obj.restore(best);
    report.final_lr = adam.config.lr;
    Ok(report)
}
