#![allow(dead_code)]

use std::path::{Path, PathBuf};

use adenoseg::run::{DataConfig, RunConfig};
use adenoseg::train::TrainConfig;
use adenoseg::ModelConfig;
use image::{GrayImage, Luma, Rgb, RgbImage};

/// Axis-aligned rectangles `(x0, y0, x1, y1)`, exclusive ends.
pub const RECTS: [(u32, u32, u32, u32); 4] = [(8, 8, 40, 30), (20, 16, 56, 56), (4, 36, 30, 60), (30, 4, 60, 26)];

/// Writes `RECTS.len()` images of filled rectangles with matching masks.
pub fn write_rectangle_dataset(root: &Path, size: u32) -> PathBuf {
    let scale = size as f64 / 64.0;
    std::fs::create_dir_all(root.join("image")).unwrap();
    std::fs::create_dir_all(root.join("mask")).unwrap();
    for (i, &(x0, y0, x1, y1)) in RECTS.iter().enumerate() {
        let s = |v: u32| (v as f64 * scale).round() as u32;
        let inside = |x: u32, y: u32| x >= s(x0) && x < s(x1) && y >= s(y0) && y < s(y1);
        let img = RgbImage::from_fn(size, size, |x, y| {
            // mild deterministic texture so the background is not flat
            let t = ((x * 7 + y * 13 + i as u32 * 5) % 11) as u8;
            if inside(x, y) {
                Rgb([110 + t, 40 + t, 120 + t])
            } else {
                Rgb([225 - t, 205 - t, 215 - t])
            }
        });
        let mask = GrayImage::from_fn(size, size, |x, y| Luma([if inside(x, y) { 255 } else { 0 }]));
        img.save(root.join("image").join(format!("rect{i}.png"))).unwrap();
        mask.save(root.join("mask").join(format!("rect{i}.png"))).unwrap();
    }
    root.to_path_buf()
}

/// A fast configuration over a rectangle dataset at `root`.
pub fn tiny_run(root: &Path, output: &Path, size: u32, epochs: u64) -> RunConfig {
    RunConfig {
        seed: 11,
        output_dir: output.to_path_buf(),
        model: ModelConfig::tiny(),
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2,
            epochs,
            checkpoint_every: 1,
            ..TrainConfig::default()
        },
        data: DataConfig {
            root: root.to_path_buf(),
            patch_size: size,
            patches_per_image: 1,
            val_fraction: 0.0,
            ..DataConfig::default()
        },
        infer: adenoseg::infer::SlidingWindowConfig {
            window: size as usize,
            stride: size as usize / 2,
            ..Default::default()
        },
        ..RunConfig::default()
    }
}
