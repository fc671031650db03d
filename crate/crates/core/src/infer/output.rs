//! Rendering and writing prediction artifacts.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use tiff::encoder::{colortype, TiffEncoder};

use crate::error::{Error, Result};
use crate::infer::predict::ProbabilityMap;

/// Tint applied to foreground pixels in overlays.
pub const HIGHLIGHT: [u8; 3] = [0, 255, 0];

pub fn render_overlay(image: &RgbImage, mask: &GrayImage, alpha: f64) -> Result<RgbImage> {
    if image.dimensions() != mask.dimensions() {
        return Err(Error::Shape(format!(
            "image is {:?} but mask is {:?}",
            image.dimensions(),
            mask.dimensions()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Value(format!("overlay alpha {alpha} must lie in [0, 1]")));
    }
    let mut out = image.clone();
    for (px, m) in out.pixels_mut().zip(mask.pixels()) {
        if m.0[0] == 0 {
            continue;
        }
        let blended: [u8; 3] = std::array::from_fn(|i| {
            let c = f64::from(px.0[i]) * (1.0 - alpha) + f64::from(HIGHLIGHT[i]) * alpha;
            c.round().clamp(0.0, 255.0) as u8
        });
        *px = Rgb(blended);
    }
    Ok(out)
}

/// Writes a 0/1 mask as an 8-bit PNG with values {0, 255}.
pub fn write_mask_png(mask: &GrayImage, path: &Path) -> Result<()> {
    let scaled = GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        image::Luma([if mask.get_pixel(x, y).0[0] > 0 { 255 } else { 0 }])
    });
    scaled
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

pub fn write_rgb_png(image: &RgbImage, path: &Path) -> Result<()> {
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_error(path, e))
}

/// Writes probabilities as a single-channel 32-bit float TIFF.
pub fn write_probability_tiff(map: &ProbabilityMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_error(path, e))?;
    encoder
        .write_image::<colortype::Gray32Float>(map.width as u32, map.height as u32, &map.data)
        .map_err(|e| tiff_error(path, e))
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Value(format!("{}: {other}", path.display())),
    }
}

fn tiff_error(path: &Path, e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::Value(format!("{}: {other}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RgbImage {
        RgbImage::from_fn(4, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 70, 9]))
    }

    #[test]
    fn overlay_edge_cases() {
        let img = sample();
        let full = GrayImage::from_pixel(4, 3, image::Luma([1]));
        let empty = GrayImage::new(4, 3);
        assert_eq!(render_overlay(&img, &full, 0.0).unwrap(), img);
        assert_eq!(render_overlay(&img, &empty, 0.8).unwrap(), img);
        let solid = render_overlay(&img, &full, 1.0).unwrap();
        assert!(solid.pixels().all(|p| p.0 == HIGHLIGHT));
        assert!(render_overlay(&img, &GrayImage::new(2, 2), 0.5).is_err());
    }

    #[test]
    fn probability_tiff_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.tif");
        let map = ProbabilityMap {
            height: 2,
            width: 3,
            data: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125],
        };
        write_probability_tiff(&map, &path).unwrap();
        let mut dec = tiff::decoder::Decoder::new(File::open(&path).unwrap()).unwrap();
        assert_eq!(dec.dimensions().unwrap(), (3, 2));
        match dec.read_image().unwrap() {
            tiff::decoder::DecodingResult::F32(v) => assert_eq!(v, map.data),
            _ => panic!("expected f32 samples"),
        }
    }

    #[test]
    fn mask_png_uses_full_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = GrayImage::from_raw(2, 1, vec![0, 1]).unwrap();
        write_mask_png(&mask, &path).unwrap();
        assert_eq!(image::open(&path).unwrap().to_luma8().as_raw(), &vec![0, 255]);
    }
}
