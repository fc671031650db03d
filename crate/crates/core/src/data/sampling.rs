//! Random patch extraction and flip augmentation.

use image::imageops;
use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::dataset::LoadedSample;
use crate::error::{Error, Result};
use crate::nn::mirror_index;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSpec {
    pub hflip: bool,
    pub vflip: bool,
    pub probability: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            hflip: true,
            vflip: true,
            probability: 0.5,
        }
    }
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self {
            hflip: false,
            vflip: false,
            probability: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!(
                "aug.probability must lie in [0, 1], got {}",
                self.probability
            )));
        }
        Ok(())
    }
}

/// Which flips one augmentation draw applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlipDraw {
    pub horizontal: bool,
    pub vertical: bool,
}

/// Reflection-pads an image so both sides are at least `min_side`.
pub fn reflect_to_min<P: image::Pixel>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>, min_side: u32) -> image::ImageBuffer<P, Vec<P::Subpixel>> {
    let (w, h) = img.dimensions();
    let (tw, th) = (w.max(min_side), h.max(min_side));
    if (tw, th) == (w, h) {
        return img.clone();
    }
    // pad split evenly, extra pixel on the bottom/right
    let (left, top) = ((tw - w) / 2, (th - h) / 2);
    image::ImageBuffer::from_fn(tw, th, |x, y| {
        let sx = mirror_index(x as usize, left as usize, w as usize) as u32;
        let sy = mirror_index(y as usize, top as usize, h as usize) as u32;
        *img.get_pixel(sx, sy)
    })
}

/// Uniformly drawn top-left corner of a `patch x patch` window.
pub fn random_corner(width: u32, height: u32, patch: u32, rng: &mut impl Rng) -> (u32, u32) {
    let x = rng.random_range(0..=width.saturating_sub(patch));
    let y = rng.random_range(0..=height.saturating_sub(patch));
    (x, y)
}

/// Corner of a window containing a randomly chosen foreground pixel, or a
/// uniform corner when the mask is empty.
fn foreground_corner(mask: &GrayImage, patch: u32, rng: &mut impl Rng) -> (u32, u32) {
    let (w, h) = mask.dimensions();
    let count = mask.pixels().filter(|p| p.0[0] != 0).count();
    if count == 0 {
        return random_corner(w, h, patch, rng);
    }
    let pick = rng.random_range(0..count);
    let (px, py) = mask
        .enumerate_pixels()
        .filter(|(_, _, p)| p.0[0] != 0)
        .nth(pick)
        .map(|(x, y, _)| (x, y))
        .expect("pick < count");
    let lo = |c: u32, side: u32| c.saturating_sub(patch - 1).min(side - patch);
    let hi = |c: u32, side: u32| c.min(side - patch);
    let x = rng.random_range(lo(px, w)..=hi(px, w));
    let y = rng.random_range(lo(py, h)..=hi(py, h));
    (x, y)
}

/// Crops the same random window from an image and its mask. Inputs smaller
/// than the patch are reflection-padded first.
pub fn extract_random_patch(
    sample: &LoadedSample,
    patch: u32,
    foreground_balanced: bool,
    rng: &mut impl Rng,
) -> (RgbImage, GrayImage) {
    let image = reflect_to_min::<Rgb<u8>>(&sample.image, patch);
    let mask = reflect_to_min::<Luma<u8>>(&sample.mask, patch);
    let (w, h) = image.dimensions();
    let use_foreground = foreground_balanced && rng.random_bool(0.5);
    let (x, y) = if use_foreground {
        foreground_corner(&mask, patch, rng)
    } else {
        random_corner(w, h, patch, rng)
    };
    (
        imageops::crop_imm(&image, x, y, patch, patch).to_image(),
        imageops::crop_imm(&mask, x, y, patch, patch).to_image(),
    )
}

/// Applies the same random flips to an image and its mask.
pub fn apply_flips(
    image: RgbImage,
    mask: GrayImage,
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> (RgbImage, GrayImage, FlipDraw) {
    // Both draws are always consumed so enabling one flip does not change
    // the other's outcome.
    let dh = rng.random::<f64>();
    let dv = rng.random::<f64>();
    let draw = FlipDraw {
        horizontal: spec.hflip && dh < spec.probability,
        vertical: spec.vflip && dv < spec.probability,
    };
    let (mut image, mut mask) = (image, mask);
    if draw.horizontal {
        imageops::flip_horizontal_in_place(&mut image);
        imageops::flip_horizontal_in_place(&mut mask);
    }
    if draw.vertical {
        imageops::flip_vertical_in_place(&mut image);
        imageops::flip_vertical_in_place(&mut mask);
    }
    (image, mask, draw)
}
