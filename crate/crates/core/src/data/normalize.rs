use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel standardization with the pretrained backbone's statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalizer {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalizer {
    /// ImageNet RGB statistics.
    fn default() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

impl Normalizer {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!("data.std must be positive, got {:?}", self.std)));
        }
        Ok(())
    }

    /// Channel-major `(3, H, W)` values.
    pub fn normalize_rgb8(&self, image: &RgbImage) -> Vec<f32> {
        let (w, h) = image.dimensions();
        let plane = (w * h) as usize;
        let mut out = vec![0f32; 3 * plane];
        for (i, p) in image.pixels().enumerate() {
            for c in 0..3 {
                out[c * plane + i] = (p.0[c] as f32 / 255.0 - self.mean[c]) / self.std[c];
            }
        }
        out
    }

    /// Normalizes channel-major raw values in [0, 255].
    pub fn normalize_raw(&self, raw: &[f32]) -> Result<Vec<f32>> {
        if raw.len() % 3 != 0 {
            return Err(Error::Value(format!("{} values do not form 3 channels", raw.len())));
        }
        if let Some(v) = raw.iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::Value(format!("raw pixel value {v} outside [0, 255]")));
        }
        let plane = raw.len() / 3;
        Ok(raw
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = i / plane;
                (v / 255.0 - self.mean[c]) / self.std[c]
            })
            .collect())
    }

    pub fn denormalize(&self, values: &[f32]) -> Vec<f32> {
        let plane = values.len() / 3;
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = (i / plane.max(1)).min(2);
                (v * self.std[c] + self.mean[c]) * 255.0
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_patch_maps_to_negative_mean_over_std() {
        let n = Normalizer::default();
        let out = n.normalize_rgb8(&RgbImage::new(4, 4));
        for c in 0..3 {
            let expected = -n.mean[c] / n.std[c];
            assert!(out[c * 16..(c + 1) * 16].iter().all(|&v| v == expected));
        }
    }

    #[test]
    fn out_of_range_is_rejected() {
        let n = Normalizer::default();
        assert!(n.normalize_raw(&[0.0, 256.0, 1.0]).is_err());
        assert!(n.normalize_raw(&[-1.0, 0.0, 1.0]).is_err());
        assert!(n.normalize_raw(&[0.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn inverse_recovers_input(raw in proptest::collection::vec(0f32..=255.0, 3..60)) {
            let len = raw.len() / 3 * 3;
            let raw = &raw[..len];
            let n = Normalizer::default();
            let out = n.normalize_raw(raw).unwrap();
            prop_assert!(out.iter().all(|v| v.is_finite()));
            let back = n.denormalize(&out);
            for (a, b) in raw.iter().zip(back) {
                // relative 1e-6 of the 255 range
                prop_assert!((a - b).abs() <= 255.0 * 1e-6, "{a} vs {b}");
            }
        }
    }
}
