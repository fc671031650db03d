//! Losses, metrics, optimizer, checkpoints and the training loop.

pub mod adam;
pub mod checkpoint;
pub mod engine;
pub mod loss;
pub mod metrics;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use engine::{
    epoch_checkpoint_name, fit, FitOptions, FitOutcome, LrSchedule, RngState, StepReport, TrainConfig, TrainState,
    Validator, METRICS_FILE,
};
pub use loss::{bce_loss, composite_loss, dice_loss, LossParts, DICE_SMOOTH};
pub use metrics::{dice_score, iou_score, MetricsRecord, OverlapCounts, METRICS_CSV_HEADER};
