//! Epoch streams of augmented, normalized patch batches.
//!
//! Every patch draws its crop and flips from substreams keyed by
//! `(epoch, position in epoch)`, so the stream is a pure function of the
//! samples, the sampling settings and the seeds, whatever the worker count.

use std::collections::VecDeque;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::dataset::LoadedSample;
use crate::data::normalize::Normalizer;
use crate::data::sampling::{apply_flips, extract_random_patch, AugmentationSpec};
use crate::error::{DatasetError, Error, Result};
use crate::seed::rng_for;

/// Environment variable capping data-pipeline parallelism.
pub const WORKERS_ENV: &str = "SEG_NUM_WORKERS";

pub fn worker_count() -> usize {
    let default = rayon::current_num_threads().max(1);
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map(|n| n.min(default))
        .unwrap_or(default)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub patch_size: u32,
    pub patches_per_image: usize,
    pub batch_size: usize,
    pub foreground_balanced: bool,
    pub augmentation: AugmentationSpec,
    pub normalizer: Normalizer,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            patch_size: 224,
            patches_per_image: 8,
            batch_size: 32,
            foreground_balanced: false,
            augmentation: AugmentationSpec::default(),
            normalizer: Normalizer::default(),
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patches_per_image == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "patch_size, patches_per_image and batch_size must be positive".into(),
            ));
        }
        self.augmentation.validate()?;
        self.normalizer.validate()
    }
}

/// Normalized images `(B, 3, P, P)` and binary masks `(B, 1, P, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub index: usize,
    pub batch: usize,
    pub patch: usize,
    pub images: Vec<f32>,
    pub masks: Vec<f32>,
}

impl PatchBatch {
    pub fn images_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.images, (self.batch, 3, self.patch, self.patch), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    pub fn masks_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.masks, (self.batch, 1, self.patch, self.patch), device)?;
        Ok(t.to_dtype(dtype)?)
    }
}

/// The shuffled patch schedule of one epoch.
pub struct EpochPlan {
    samples: Arc<Vec<LoadedSample>>,
    order: Vec<usize>,
    config: SamplingConfig,
    data_seed: u64,
    augment_seed: u64,
    epoch: u64,
}

pub fn make_epoch(
    samples: Arc<Vec<LoadedSample>>,
    config: &SamplingConfig,
    data_seed: u64,
    augment_seed: u64,
    epoch: u64,
) -> Result<EpochPlan> {
    if samples.is_empty() {
        return Err(Error::Config(DatasetError::Empty.to_string()));
    }
    config.validate()?;
    let mut order: Vec<usize> = (0..samples.len())
        .flat_map(|s| std::iter::repeat_n(s, config.patches_per_image))
        .collect();
    order.shuffle(&mut rng_for(data_seed, "order", &[epoch]));
    Ok(EpochPlan {
        samples,
        order,
        config: config.clone(),
        data_seed,
        augment_seed,
        epoch,
    })
}

impl EpochPlan {
    pub fn num_patches(&self) -> usize {
        self.order.len()
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.config.batch_size)
    }

    pub fn batch_len(&self, index: usize) -> usize {
        let start = index * self.config.batch_size;
        (self.order.len() - start).min(self.config.batch_size)
    }

    /// Builds batch `index`; the result depends only on the plan and `index`.
    pub fn batch(&self, index: usize) -> PatchBatch {
        let p = self.config.patch_size;
        let plane = (p * p) as usize;
        let start = index * self.config.batch_size;
        let len = self.batch_len(index);
        let mut images = Vec::with_capacity(len * 3 * plane);
        let mut masks = Vec::with_capacity(len * plane);
        for pos in start..start + len {
            let sample = &self.samples[self.order[pos]];
            let mut crop_rng = rng_for(self.data_seed, "patch", &[self.epoch, pos as u64]);
            let mut flip_rng = rng_for(self.augment_seed, "flip", &[self.epoch, pos as u64]);
            let (img, mask) = extract_random_patch(sample, p, self.config.foreground_balanced, &mut crop_rng);
            let (img, mask, _) = apply_flips(img, mask, &self.config.augmentation, &mut flip_rng);
            images.extend(self.config.normalizer.normalize_rgb8(&img));
            masks.extend(mask.pixels().map(|m| f32::from(m.0[0])));
        }
        PatchBatch {
            index,
            batch: len,
            patch: p as usize,
            images,
            masks,
        }
    }

    /// Streams batches in order, building up to `workers` at a time.
    pub fn stream(&self, workers: usize) -> EpochStream<'_> {
        EpochStream {
            plan: self,
            next: 0,
            workers: workers.max(1),
            ready: VecDeque::new(),
        }
    }
}

pub struct EpochStream<'a> {
    plan: &'a EpochPlan,
    next: usize,
    workers: usize,
    ready: VecDeque<PatchBatch>,
}

impl Iterator for EpochStream<'_> {
    type Item = PatchBatch;

    fn next(&mut self) -> Option<PatchBatch> {
        if self.ready.is_empty() {
            let end = (self.next + self.workers).min(self.plan.num_batches());
            if self.next >= end {
                return None;
            }
            let built: Vec<PatchBatch> = if self.workers == 1 {
                (self.next..end).map(|i| self.plan.batch(i)).collect()
            } else {
                (self.next..end).into_par_iter().map(|i| self.plan.batch(i)).collect()
            };
            self.next = end;
            self.ready.extend(built);
        }
        self.ready.pop_front()
    }
}
