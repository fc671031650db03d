//! Stem and patch embedding: the two convolutional stages ahead of the
//! transformer stages.

use crate::error::{Error, Result};
use crate::model::{FeatureMap, Level};
use crate::nn::{to_channels_first, to_channels_last, Conv2d, InstanceNorm2d, LayerNorm};
use crate::params::{ParamStore, Path};

/// Strided convolution followed by instance normalization.
#[derive(Debug, Clone)]
pub struct Stem {
    conv: Conv2d,
    norm: InstanceNorm2d,
    in_channels: usize,
    stride: usize,
}

impl Stem {
    pub fn new(
        store: &mut ParamStore,
        path: &Path,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &path.join("conv"), in_channels, out_channels, kernel, stride, padding)?,
            norm: InstanceNorm2d::new(store, &path.join("norm"), out_channels)?,
            in_channels,
            stride,
        })
    }

    fn conv_out(&self, fm: &FeatureMap) -> Result<candle_core::Tensor> {
        let (_, c, h, w) = fm.dims()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!("stem expects {} channels, got {c}", self.in_channels)));
        }
        if h % self.stride != 0 || w % self.stride != 0 {
            return Err(Error::Shape(format!(
                "stem input {h}x{w} is not divisible by stride {}",
                self.stride
            )));
        }
        self.conv.forward(fm.tensor())
    }

    /// Normalized stem output before the affine terms.
    pub fn pre_affine(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let x = self.norm.normalize(&self.conv_out(fm)?)?;
        Ok(FeatureMap::new(x, Level::Untagged))
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let x = self.norm.forward(&self.conv_out(fm)?)?;
        Ok(FeatureMap::new(x, Level::Encoder(1)))
    }
}

/// Non-overlapping patch projection with layer normalization over channels.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    proj: Conv2d,
    norm: LayerNorm,
    in_channels: usize,
    patch: usize,
}

impl PatchEmbed {
    pub fn new(store: &mut ParamStore, path: &Path, in_channels: usize, out_channels: usize, patch: usize) -> Result<Self> {
        Ok(Self {
            proj: Conv2d::new(store, &path.join("proj"), in_channels, out_channels, patch, patch, 0)?,
            norm: LayerNorm::new(store, &path.join("norm"), out_channels)?,
            in_channels,
            patch,
        })
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let (_, c, h, w) = fm.dims()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "patch embedding expects {} channels, got {c}",
                self.in_channels
            )));
        }
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::Shape(format!(
                "patch embedding input {h}x{w} is not divisible by patch size {}",
                self.patch
            )));
        }
        let x = self.proj.forward(fm.tensor())?;
        let x = self.norm.forward(&to_channels_last(&x)?)?;
        Ok(FeatureMap::new(to_channels_first(&x)?, Level::Encoder(2)))
    }
}
