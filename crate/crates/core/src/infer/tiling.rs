//! Tile layout for sliding-window prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    /// Arithmetic mean of overlapping logits.
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlidingWindowConfig {
    pub window: usize,
    pub stride: usize,
    pub threshold: f64,
    pub blend: Blend,
    /// Tiles per forward pass.
    pub tile_batch: usize,
}

impl Default for SlidingWindowConfig {
    fn default() -> Self {
        Self {
            window: 224,
            stride: 112,
            threshold: 0.5,
            blend: Blend::Mean,
            tile_batch: 4,
        }
    }
}

impl SlidingWindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 || self.stride > self.window {
            return Err(Error::Config(format!(
                "need 1 <= stride <= window, got stride {} and window {}",
                self.stride, self.window
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} must lie in (0, 1)", self.threshold)));
        }
        if self.tile_batch == 0 {
            return Err(Error::Config("tile_batch must be positive".into()));
        }
        Ok(())
    }
}

/// Top-left corners of every window over an image padded on the bottom and
/// right to `padded_size`. Sizes are `(height, width)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub image_size: (usize, usize),
    pub window: usize,
    pub tiles: Vec<(usize, usize)>,
    pub padded_size: (usize, usize),
}

/// Windows along one axis of length `extent`.
pub fn tiles_per_axis(extent: usize, window: usize, stride: usize) -> usize {
    (extent.max(window) - window).div_ceil(stride) + 1
}

pub fn plan_tiles(image_size: (usize, usize), config: &SlidingWindowConfig) -> Result<TilePlan> {
    config.validate()?;
    let (h, w) = image_size;
    if h == 0 || w == 0 {
        return Err(Error::Shape(format!("image size {h}x{w} is empty")));
    }
    let (win, stride) = (config.window, config.stride);
    let ny = tiles_per_axis(h, win, stride);
    let nx = tiles_per_axis(w, win, stride);
    let padded_size = ((ny - 1) * stride + win, (nx - 1) * stride + win);
    let tiles = (0..ny)
        .flat_map(|r| (0..nx).map(move |c| (r * stride, c * stride)))
        .collect();
    Ok(TilePlan {
        image_size,
        window: win,
        tiles,
        padded_size,
    })
}

impl TilePlan {
    pub fn len(&self) -> usize {
        self.tiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tiles.is_empty()
    }

    /// Number of windows covering each pixel of the padded image, row-major.
    pub fn hit_counts(&self) -> Vec<u32> {
        let (ph, pw) = self.padded_size;
        let mut hits = vec![0u32; ph * pw];
        for &(r, c) in &self.tiles {
            for y in r..r + self.window {
                for h in &mut hits[y * pw + c..y * pw + c + self.window] {
                    *h += 1;
                }
            }
        }
        hits
    }
}
