//! Dataset ingestion, patch sampling, augmentation and batching.

pub mod dataset;
pub mod epoch;
pub mod normalize;
pub mod sampling;

pub use dataset::{load_all, scan_dataset, scan_dataset_with, DatasetLayout, LoadedSample, SampleRecord};
pub use epoch::{make_epoch, EpochPlan, PatchBatch, SamplingConfig};
pub use normalize::Normalizer;
pub use sampling::{apply_flips, extract_random_patch, AugmentationSpec, FlipDraw};
