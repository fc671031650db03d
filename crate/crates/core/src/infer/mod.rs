//! Sliding-window prediction on full regions of interest.

pub mod output;
pub mod predict;
pub mod tiling;

pub use output::{render_overlay, write_mask_png, write_probability_tiff, write_rgb_png, HIGHLIGHT};
pub use predict::{binarize, sliding_window_logits, sliding_window_predict, ChwImage, ProbabilityMap};
pub use tiling::{plan_tiles, tiles_per_axis, Blend, SlidingWindowConfig, TilePlan};
