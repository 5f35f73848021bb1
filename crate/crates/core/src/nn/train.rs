use log::{debug, info};
use rand::seq::SliceRandom;

use super::adam::{AdamConfig, AdamState};
use super::model::{Architecture, CnnModel, Head, N_OUTPUTS};
use crate::error::{Error, Result};
use crate::rng;
use crate::windows::WindowSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    /// Epochs without a validation-MAE improvement before stopping.
    pub patience: usize,
    pub head: Head,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            seed: 0,
            lr: 1e-3,
            patience: 10,
            head: Head::GlobalAverage,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "epochs, batch size and patience must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-batch training losses.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the returned checkpoint.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }

    /// Tab-separated table, one row per epoch.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# rvrecon history v1\nepoch\ttrain_loss\tval_loss\tval_mae\n");
        for r in &self.epochs {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", r.epoch, r.train_loss, r.val_loss, r.val_mae));
        }
        out
    }
}

/// Copy windows `idx` into one contiguous batch.
pub(crate) fn gather(set: &WindowSet, idx: &[usize], inputs: &mut Vec<f64>, targets: &mut Vec<[f64; N_OUTPUTS]>) {
    let per = set.n_channels() * set.spec().window_len;
    inputs.clear();
    inputs.resize(idx.len() * per, 0.0);
    targets.clear();
    for (k, &i) in idx.iter().enumerate() {
        set.fill_input(i, &mut inputs[k * per..(k + 1) * per]);
        targets.push(set.targets(i));
    }
}

/// Mean squared error and mean absolute error of `model` over every window.
pub fn evaluate(model: &CnnModel, set: &WindowSet, batch_size: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let (mut se, mut ae) = (0.0, 0.0);
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        gather(set, idx, &mut inputs, &mut targets);
        for (y, t) in model.forward(&inputs)?.iter().zip(&targets) {
            for j in 0..N_OUTPUTS {
                let d = y[j] - t[j];
                se += d * d;
                ae += d.abs();
            }
        }
    }
    let n = (set.len() * N_OUTPUTS) as f64;
    Ok((se / n, ae / n))
}

/// One optimizer step on a batch; returns the batch loss before the update.
pub fn train_step(model: &mut CnnModel, adam: &mut AdamState, inputs: &[f64], targets: &[[f64; N_OUTPUTS]]) -> Result<f64> {
    let (loss, grads) = model.backward(inputs, targets)?;
    adam.step(model.params_mut(), &grads.0)?;
    Ok(loss)
}

/// Mini-batch Adam on `train_set`, keeping the parameters with the lowest
/// validation MAE. Deterministic for a given seed.
pub fn train(train_set: &WindowSet, val_set: &WindowSet, config: &TrainConfig) -> Result<(CnnModel, History)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training needs at least one training and one validation window".into(),
        ));
    }
    if train_set.n_channels() != val_set.n_channels() || train_set.spec() != val_set.spec() {
        return Err(Error::Shape("training and validation windows differ in shape".into()));
    }
    let arch = Architecture::standard(train_set.n_channels(), train_set.spec().window_len).with_head(config.head);
    let mut model = CnnModel::new(arch, config.seed)?;
    let adam_config = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(model.params(), adam_config);
    let mut shuffle = rng::stream(config.seed, rng::SHUFFLE);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut history = History::default();
    let mut best = model.clone();
    let mut best_mae = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut n_batches = 0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            gather(train_set, idx, &mut inputs, &mut targets);
            let loss = match train_step(&mut model, &mut adam, &inputs, &targets) {
                Ok(l) => l,
                Err(Error::NonFiniteActivation { .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if model.params().iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            loss_sum += loss;
            n_batches += 1;
        }
        let (val_loss, val_mae) = match evaluate(&model, val_set, config.batch_size) {
            Err(Error::NonFiniteActivation { .. }) => {
                return Err(Error::Diverged {
                    epoch,
                    batch: n_batches,
                    loss: f64::NAN,
                })
            }
            r => r?,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n_batches as f64,
            val_loss,
            val_mae,
        };
        debug!(
            "epoch {epoch}: train {:.6} val mse {val_loss:.6} mae {val_mae:.6}",
            record.train_loss
        );
        history.epochs.push(record);
        if val_mae < best_mae {
            best_mae = val_mae;
            best = model.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    info!(
        "trained {} epochs, best epoch {} (val mae {best_mae:.6})",
        history.epochs.len(),
        history.best_epoch
    );
    Ok((best, history))
}
