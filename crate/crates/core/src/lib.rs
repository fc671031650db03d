//! Histopathology tumor segmentation with a pretrained Swin-UNet encoder and
//! parallel cross-attention decoder.
//!
//! * [`model`]: network definition and forward passes.
//! * [`pretrained`]: weight archives and the initialization policy.
//! * [`data`]: dataset ingestion, patch sampling and augmentation.
//! * [`train`]: losses, metrics, optimizer, checkpoints and the training loop.
//! * [`infer`]: sliding-window prediction and output rendering.
//! * [`run`]: the structured run configuration shared by the command line.

pub mod config;
pub mod data;
pub mod error;
pub mod infer;
pub mod model;
pub mod nn;
pub mod params;
pub mod pretrained;
pub mod run;
pub mod seed;
pub mod train;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use model::{build_model, FeatureMap, Level, SkipPyramid, SwinUNet};
pub use params::ParamStore;
pub use run::RunConfig;
pub use candle_core;
