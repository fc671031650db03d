//! The parallel cross-attention pair: position attention at the bottleneck
//! and multi-scale channel-gated fusion at every skip connection.

use candle_core::{DType, Tensor, D};

use crate::error::{Error, Result};
use crate::model::{FeatureMap, Level};
use crate::nn::{gelu, resize_bilinear, sigmoid, softmax_last, Linear, PointwiseConv};
use crate::params::{Init, ParamStore, Path};

/// Global spatial self-attention with a zero-initialized residual gain.
#[derive(Debug, Clone)]
pub struct PositionAttention {
    query: PointwiseConv,
    key: PointwiseConv,
    value: PointwiseConv,
    gamma: Tensor,
    channels: usize,
}

impl PositionAttention {
    pub fn new(store: &mut ParamStore, path: &Path, channels: usize) -> Result<Self> {
        let reduced = (channels / 8).max(1);
        Ok(Self {
            query: PointwiseConv::new(store, &path.join("query"), channels, reduced)?,
            key: PointwiseConv::new(store, &path.join("key"), channels, reduced)?,
            value: PointwiseConv::new(store, &path.join("value"), channels, channels)?,
            gamma: store.get(&path.param("gamma"), &[1], Init::Zeros)?,
            channels,
        })
    }

    fn check(&self, fm: &FeatureMap) -> Result<(usize, usize, usize, usize)> {
        let dims = fm.dims()?;
        if dims.1 != self.channels {
            return Err(Error::Shape(format!(
                "position attention expects {} channels, got {}",
                self.channels, dims.1
            )));
        }
        Ok(dims)
    }

    /// Row-stochastic `(B, HW, HW)` pixel affinity.
    pub fn affinity(&self, fm: &FeatureMap) -> Result<Tensor> {
        let (b, c, h, w) = self.check(fm)?;
        let flat = fm.tensor().reshape((b, c, h * w))?;
        let q = self.query.forward_flat(&flat)?;
        let k = self.key.forward_flat(&flat)?;
        softmax_last(&q.transpose(1, 2)?.contiguous()?.matmul(&k)?)
    }

    pub fn gamma(&self) -> &Tensor {
        &self.gamma
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let (b, c, h, w) = self.check(fm)?;
        let flat = fm.tensor().reshape((b, c, h * w))?;
        let attn = self.affinity(fm)?;
        let v = self.value.forward_flat(&flat)?;
        let out = v.matmul(&attn.transpose(1, 2)?.contiguous()?)?;
        let out = out.broadcast_mul(&self.gamma)?.reshape((b, c, h, w))?;
        Ok(FeatureMap::new((fm.tensor() + out)?, fm.level()))
    }
}

/// Squeeze-excitation style channel gate: pool, bottleneck, sigmoid.
#[derive(Debug, Clone)]
pub struct ChannelGate {
    fc1: Linear,
    fc2: Linear,
}

impl ChannelGate {
    pub fn new(store: &mut ParamStore, path: &Path, channels: usize) -> Result<Self> {
        let hidden = (channels / 8).max(1);
        Ok(Self {
            fc1: Linear::new(store, &path.join("fc1"), channels, hidden, true)?,
            fc2: Linear::new(store, &path.join("fc2"), hidden, channels, true)?,
        })
    }

    /// Gate vector `(B, C)` with entries in (0, 1).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // f64 accumulation keeps the pooled value independent of map size
        let pooled = x.to_dtype(DType::F64)?.mean(D::Minus1)?.mean(D::Minus1)?.to_dtype(x.dtype())?;
        sigmoid(&self.fc2.forward(&gelu(&self.fc1.forward(&pooled)?)?)?)
    }
}

/// Gates from both inputs of one fusion, `(B, C_high)` and `(B, C_low)`.
#[derive(Debug, Clone)]
pub struct FusionGates {
    pub high: Tensor,
    pub low: Tensor,
}

/// Multi-scale fusion: gates the upsampled deep map and the skip map
/// separately, concatenates them and projects to the skip width.
#[derive(Debug, Clone)]
pub struct MultiScaleFusion {
    gate_high: ChannelGate,
    gate_low: ChannelGate,
    proj: PointwiseConv,
    high_channels: usize,
    low_channels: usize,
}

impl MultiScaleFusion {
    pub fn new(store: &mut ParamStore, path: &Path, low_channels: usize, high_channels: usize) -> Result<Self> {
        Ok(Self {
            gate_high: ChannelGate::new(store, &path.join("gate_high"), high_channels)?,
            gate_low: ChannelGate::new(store, &path.join("gate_low"), low_channels)?,
            proj: PointwiseConv::new(store, &path.join("proj"), high_channels + low_channels, low_channels)?,
            high_channels,
            low_channels,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.low_channels
    }

    fn aligned_high(&self, low: &FeatureMap, high: &FeatureMap) -> Result<Tensor> {
        let (lb, lc, lh, lw) = low.dims()?;
        let (hb, hc, hh, hw) = high.dims()?;
        if lb != hb || lc != self.low_channels || hc != self.high_channels {
            return Err(Error::Shape(format!(
                "fusion expects low (B, {}, ..) and high (B, {}, ..), got ({lb}, {lc}, ..) and ({hb}, {hc}, ..)",
                self.low_channels, self.high_channels
            )));
        }
        let integer_ratio = lh % hh == 0 && lw % hw == 0 && lh / hh == lw / hw;
        if !integer_ratio {
            return Err(Error::Shape(format!(
                "high map {hh}x{hw} is not an integer downscale of low map {lh}x{lw}"
            )));
        }
        resize_bilinear(high.tensor(), lh, lw)
    }

    pub fn gates(&self, low: &FeatureMap, high: &FeatureMap) -> Result<FusionGates> {
        let high = self.aligned_high(low, high)?;
        Ok(FusionGates {
            high: self.gate_high.forward(&high)?,
            low: self.gate_low.forward(low.tensor())?,
        })
    }

    pub fn forward(&self, low: &FeatureMap, high: &FeatureMap) -> Result<FeatureMap> {
        let high = self.aligned_high(low, high)?;
        let gh = self.gate_high.forward(&high)?.unsqueeze(2)?.unsqueeze(3)?;
        let gl = self.gate_low.forward(low.tensor())?.unsqueeze(2)?.unsqueeze(3)?;
        let fused = Tensor::cat(&[high.broadcast_mul(&gh)?, low.tensor().broadcast_mul(&gl)?], 1)?;
        Ok(FeatureMap::new(self.proj.forward(&fused)?, Level::Untagged))
    }
}
