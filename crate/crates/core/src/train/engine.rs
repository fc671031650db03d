//! Training configuration, state and the epoch loop.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_epoch, LoadedSample, PatchBatch, SamplingConfig};
use crate::error::{Error, Result};
use crate::model::SwinUNet;
use crate::seed::SeedPlan;
use crate::train::adam::{Adam, AdamConfig};
use crate::train::checkpoint::save_checkpoint;
use crate::train::loss::composite_loss;
use crate::train::metrics::{MetricsRecord, OverlapCounts, METRICS_CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over all epochs.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub dice_weight: f64,
    pub bce_weight: f64,
    pub checkpoint_every: u64,
    pub grad_clip: Option<f64>,
    pub lr_schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            dice_weight: 1.0,
            bce_weight: 1.0,
            checkpoint_every: 50,
            grad_clip: None,
            lr_schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("train.learning_rate = {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return fail("train.batch_size must be positive".into());
        }
        if self.epochs == 0 {
            return fail("train.epochs must be positive".into());
        }
        if self.checkpoint_every == 0 {
            return fail("train.checkpoint_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail(format!(
                "adam betas ({}, {}) must lie in [0, 1)",
                self.adam_beta1, self.adam_beta2
            ));
        }
        if !(self.adam_epsilon > 0.0) {
            return fail(format!("train.adam_epsilon = {} must be positive", self.adam_epsilon));
        }
        if self.dice_weight < 0.0 || self.bce_weight < 0.0 || !(self.dice_weight + self.bce_weight > 0.0) {
            return fail(format!(
                "loss weights (dice {}, bce {}) must be non-negative with a positive sum",
                self.dice_weight, self.bce_weight
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("train.grad_clip = {c} must be positive"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// Learning rate used during (zero-based) `epoch`.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let t = epoch.min(self.epochs) as f64 / self.epochs as f64;
                0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// Seeds of the counter-based sampling streams. Every draw of epoch `e` is a
/// pure function of these seeds and `e`, so they are the whole RNG state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub data_seed: u64,
    pub augment_seed: u64,
}

pub struct TrainState {
    pub model: SwinUNet,
    pub optimizer: Adam,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: RngState,
    pub best_metric: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub dice_loss: f64,
    pub bce_loss: f64,
    /// Mean per-patch Dice of the thresholded prediction.
    pub dice: f64,
    pub iou: f64,
}

impl TrainState {
    /// Fresh state; the sampling seeds are derived from `root_seed`.
    pub fn new(model: SwinUNet, config: TrainConfig, root_seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(config.adam(), model.params())?;
        let seeds = SeedPlan::from_root(root_seed);
        Ok(Self {
            model,
            optimizer,
            config,
            epoch: 0,
            step: 0,
            rng: RngState {
                data_seed: seeds.data,
                augment_seed: seeds.augment,
            },
            best_metric: None,
        })
    }

    /// Deep copy, including optimizer moments.
    pub fn try_clone(&self) -> Result<Self> {
        let model = self.model.try_clone()?;
        let moments = self
            .optimizer
            .moments()
            .iter()
            .map(|(k, (m, v))| Ok((k.clone(), (m.copy()?, v.copy()?))))
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            optimizer: Adam::restore(self.optimizer.config(), self.optimizer.steps(), moments),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            rng: self.rng,
            best_metric: self.best_metric,
        })
    }

    /// One forward/backward pass and Adam update on `batch`.
    pub fn train_step(&mut self, batch: &PatchBatch) -> Result<StepReport> {
        let dtype = self.model.dtype();
        let device = self.model.device().clone();
        let images = batch.images_tensor(dtype, &device)?;
        let masks = batch.masks_tensor(dtype, &device)?;
        let logits = self.model.forward(&images)?;
        let parts = composite_loss(&logits, &masks, self.config.dice_weight, self.config.bce_weight)?;
        let loss = self.config.dice_weight * parts.dice + self.config.bce_weight * parts.bce;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                batch: batch.index,
                dice: parts.dice,
                bce: parts.bce,
            });
        }
        let grads = parts.total.backward()?;
        let lr = self.config.lr_at(self.epoch);
        self.optimizer.step(self.model.params(), &grads, lr, self.config.grad_clip)?;
        self.step += 1;
        let (dice, iou) = patch_overlap(&logits, batch)?;
        Ok(StepReport {
            loss,
            dice_loss: parts.dice,
            bce_loss: parts.bce,
            dice,
            iou,
        })
    }
}

fn patch_overlap(logits: &candle_core::Tensor, batch: &PatchBatch) -> Result<(f64, f64)> {
    let flat = logits.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let plane = batch.patch * batch.patch;
    let (mut dice, mut iou) = (0.0, 0.0);
    for (pred, truth) in flat.chunks(plane).zip(batch.masks.chunks(plane)) {
        let p: Vec<u8> = pred.iter().map(|&v| u8::from(v > 0.0)).collect();
        let t: Vec<u8> = truth.iter().map(|&v| u8::from(v > 0.5)).collect();
        let c = OverlapCounts::from_masks(&p, &t)?;
        dice += c.dice();
        iou += c.iou();
    }
    let n = batch.batch.max(1) as f64;
    Ok((dice / n, iou / n))
}

/// Validation callback: returns a score to maximize.
pub type Validator<'a> = &'a dyn Fn(&SwinUNet) -> Result<f64>;

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Where checkpoints and `metrics.csv` go; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    /// Batches prepared concurrently ahead of the optimizer.
    pub workers: usize,
}

#[derive(Debug, Clone, Default)]
pub struct FitOutcome {
    pub records: Vec<MetricsRecord>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

pub const METRICS_FILE: &str = "metrics.csv";

pub fn epoch_checkpoint_name(epoch: u64) -> String {
    format!("epoch_{epoch:04}.ckpt")
}

fn append_metrics(path: &Path, record: &MetricsRecord) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_CSV_HEADER);
        text.push('\n');
    }
    text.push_str(&record.csv_row());
    text.push('\n');
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains from `state.epoch` until `state.config.epochs` epochs are complete.
///
/// The best checkpoint tracks the validation score when `validate` is given
/// and the training mean Dice otherwise.
pub fn fit(
    state: &mut TrainState,
    samples: Arc<Vec<LoadedSample>>,
    sampling: &SamplingConfig,
    options: &FitOptions,
    validate: Option<Validator<'_>>,
) -> Result<FitOutcome> {
    if samples.is_empty() {
        return Err(crate::error::DatasetError::Empty.into());
    }
    state.config.validate()?;
    let mut sampling = sampling.clone();
    sampling.batch_size = state.config.batch_size;
    if let Some(dir) = &options.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut outcome = FitOutcome::default();
    while state.epoch < state.config.epochs {
        let start = Instant::now();
        let plan = make_epoch(
            samples.clone(),
            &sampling,
            state.rng.data_seed,
            state.rng.augment_seed,
            state.epoch,
        )?;
        let (mut loss, mut dice, mut iou, mut patches) = (0.0, 0.0, 0.0, 0usize);
        for batch in plan.stream(options.workers) {
            let report = state.train_step(&batch)?;
            let n = batch.batch as f64;
            loss += report.loss * n;
            dice += report.dice * n;
            iou += report.iou * n;
            patches += batch.batch;
            outcome.step_losses.push(report.loss);
        }
        state.epoch += 1;
        let n = patches.max(1) as f64;
        let val_dice = validate.map(|f| f(&state.model)).transpose()?;
        let record = MetricsRecord {
            epoch: state.epoch,
            mean_loss: loss / n,
            mean_dice: dice / n,
            mean_iou: iou / n,
            wall_seconds: start.elapsed().as_secs_f64(),
            val_dice,
        };
        log::info!(
            "epoch {} loss {:.4} dice {:.4} iou {:.4}{}",
            record.epoch,
            record.mean_loss,
            record.mean_dice,
            record.mean_iou,
            val_dice.map(|v| format!(" val_dice {v:.4}")).unwrap_or_default()
        );
        let score = val_dice.unwrap_or(record.mean_dice);
        let improved = state.best_metric.is_none_or(|best| score > best);
        if improved {
            state.best_metric = Some(score);
        }
        if let Some(dir) = &options.output_dir {
            append_metrics(&dir.join(METRICS_FILE), &record)?;
            if state.epoch % state.config.checkpoint_every == 0 {
                save_checkpoint(state, dir.join(epoch_checkpoint_name(state.epoch)))?;
            }
            if improved {
                save_checkpoint(state, dir.join("best.ckpt"))?;
            }
        }
        outcome.records.push(record);
    }
    if let Some(dir) = &options.output_dir {
        save_checkpoint(state, dir.join("last.ckpt"))?;
    }
    Ok(outcome)
}
