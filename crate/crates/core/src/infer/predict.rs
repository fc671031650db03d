//! Sliding-window prediction over whole images.

use candle_core::Tensor;
use image::{GrayImage, RgbImage};
use rayon::prelude::*;

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::infer::tiling::{plan_tiles, SlidingWindowConfig, TilePlan};
use crate::model::SwinUNet;
use crate::nn::mirror_index;

/// Per-pixel foreground probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// A normalized CHW image with three channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChwImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ChwImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "{} values cannot form a 3x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_rgb(image: &RgbImage, normalizer: &Normalizer) -> Self {
        Self {
            height: image.height() as usize,
            width: image.width() as usize,
            data: normalizer.normalize_rgb8(image),
        }
    }

    /// Copies the window at `(row, col)` of the image reflected past its
    /// bottom and right edges.
    fn window(&self, row: usize, col: usize, size: usize, out: &mut Vec<f32>) {
        let plane = self.height * self.width;
        let cols: Vec<usize> = (col..col + size).map(|x| reflect_forward(x, self.width)).collect();
        for ch in 0..3 {
            for y in row..row + size {
                let src = ch * plane + reflect_forward(y, self.height) * self.width;
                out.extend(cols.iter().map(|&x| self.data[src + x]));
            }
        }
    }
}

fn reflect_forward(i: usize, n: usize) -> usize {
    mirror_index(i, 0, n)
}

/// Logits for `tiles`, one window-sized plane per tile.
fn forward_tiles(model: &SwinUNet, image: &ChwImage, window: usize, tiles: &[(usize, usize)]) -> Result<Vec<f32>> {
    let mut buf = Vec::with_capacity(tiles.len() * 3 * window * window);
    for &(r, c) in tiles {
        image.window(r, c, window, &mut buf);
    }
    let x = Tensor::from_vec(buf, (tiles.len(), 3, window, window), model.device())?;
    let logits = model.forward(&x)?;
    Ok(logits.to_dtype(candle_core::DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}

/// Mean-blended logits over the padded canvas, cropped to the image.
pub fn sliding_window_logits(
    model: &SwinUNet,
    image: &ChwImage,
    config: &SlidingWindowConfig,
) -> Result<(TilePlan, Vec<f32>)> {
    let plan = plan_tiles((image.height, image.width), config)?;
    let win = plan.window;
    let chunks: Vec<&[(usize, usize)]> = plan.tiles.chunks(config.tile_batch).collect();
    // tiles are evaluated concurrently but accumulated in plan order
    let outputs: Vec<Vec<f32>> = chunks
        .par_iter()
        .map(|chunk| forward_tiles(model, image, win, chunk))
        .collect::<Result<_>>()?;
    let (_, pw) = plan.padded_size;
    let (h, w) = plan.image_size;
    let mut sum = vec![0f64; plan.padded_size.0 * pw];
    let mut hits = vec![0u32; sum.len()];
    let tile_logits = outputs.iter().flat_map(|o| o.chunks(win * win));
    for (&(r, c), logits) in plan.tiles.iter().zip(tile_logits) {
        for dy in 0..win {
            let row = (r + dy) * pw + c;
            for dx in 0..win {
                sum[row + dx] += f64::from(logits[dy * win + dx]);
                hits[row + dx] += 1;
            }
        }
    }
    let mut cropped = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * pw + x;
            debug_assert!(hits[i] > 0);
            cropped.push((sum[i] / f64::from(hits[i])) as f32);
        }
    }
    Ok((plan, cropped))
}

pub fn sliding_window_predict(
    model: &SwinUNet,
    image: &ChwImage,
    config: &SlidingWindowConfig,
) -> Result<ProbabilityMap> {
    let (_, logits) = sliding_window_logits(model, image, config)?;
    Ok(ProbabilityMap {
        height: image.height,
        width: image.width,
        data: logits.iter().map(|&z| sigmoid_f32(z)).collect(),
    })
}

fn sigmoid_f32(z: f32) -> f32 {
    let z = f64::from(z);
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p as f32
}

/// 0/1 mask of `p > threshold`.
pub fn binarize(probabilities: &ProbabilityMap, threshold: f64) -> GrayImage {
    let data = probabilities
        .data
        .iter()
        .map(|&p| u8::from(f64::from(p) > threshold))
        .collect();
    GrayImage::from_raw(probabilities.width as u32, probabilities.height as u32, data)
        .expect("buffer length matches dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f32]) -> ProbabilityMap {
        ProbabilityMap {
            height: 1,
            width: values.len(),
            data: values.to_vec(),
        }
    }

    #[test]
    fn threshold_is_strict() {
        let m = binarize(&map(&[0.4999, 0.5, 0.5001]), 0.5);
        assert_eq!(m.as_raw(), &vec![0, 0, 1]);
        let m = binarize(&map(&[0.0, 1e-6, 0.7]), 0.0);
        assert_eq!(m.as_raw(), &vec![0, 1, 1]);
    }

    #[test]
    fn binarize_is_idempotent_on_binary_maps() {
        let once = binarize(&map(&[0.0, 1.0, 1.0, 0.0]), 0.5);
        let again = binarize(&map(&once.as_raw().iter().map(|&v| f32::from(v)).collect::<Vec<_>>()), 0.5);
        assert_eq!(once, again);
    }

    #[test]
    fn reflected_window_matches_mirror() {
        let img = ChwImage::new(2, 3, (0..18).map(|v| v as f32).collect()).unwrap();
        let mut out = Vec::new();
        img.window(0, 0, 4, &mut out);
        // channel 0 rows: [0 1 2 1] [3 4 5 4] [0 1 2 1] [3 4 5 4]
        assert_eq!(&out[..16], &[0., 1., 2., 1., 3., 4., 5., 4., 0., 1., 2., 1., 3., 4., 5., 4.]);
    }

    #[test]
    fn stable_sigmoid() {
        assert_eq!(sigmoid_f32(0.0), 0.5);
        assert!(sigmoid_f32(-200.0) >= 0.0 && sigmoid_f32(200.0) <= 1.0);
    }
}
