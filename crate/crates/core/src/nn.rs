//! Differentiable building blocks assembled from primitive tensor ops.
//!
//! Everything here is composed of operations with backward support, so the
//! whole network can be trained with `Tensor::backward`.

use candle_core::{DType, Device, Tensor, D};

use crate::error::Result;
use crate::params::{Init, ParamStore, Path};

const NORM_EPS: f64 = 1e-5;

/// Reflected source index for position `i` of a signal of length `n` padded
/// by `pad` on the leading side. Reflection repeats periodically, so any pad
/// width is valid.
pub fn mirror_index(i: usize, pad: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1) as i64;
    let j = (i as i64 - pad as i64).rem_euclid(period);
    if j < n as i64 {
        j as usize
    } else {
        (period - j) as usize
    }
}

/// Reflection-pads the last two axes of an NCHW tensor.
pub fn reflect_pad2d(x: &Tensor, top: usize, bottom: usize, left: usize, right: usize) -> Result<Tensor> {
    if top == 0 && bottom == 0 && left == 0 && right == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let rows: Vec<u32> = (0..h + top + bottom)
        .map(|i| mirror_index(i, top, h) as u32)
        .collect();
    let cols: Vec<u32> = (0..w + left + right)
        .map(|i| mirror_index(i, left, w) as u32)
        .collect();
    let rows = Tensor::new(rows.as_slice(), x.device())?;
    let cols = Tensor::new(cols.as_slice(), x.device())?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

/// Interpolation matrix (out x inp) reproducing half-pixel bilinear sampling
/// with edge clamping.
pub fn bilinear_matrix(out: usize, inp: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; out * inp];
    let scale = inp as f64 / out as f64;
    for o in 0..out {
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(inp - 1);
        let i1 = if i0 + 1 < inp { i0 + 1 } else { i0 };
        let frac = src - i0 as f64;
        m[o * inp + i0] += 1.0 - frac;
        m[o * inp + i1] += frac;
    }
    Ok(Tensor::from_vec(m, (out, inp), device)?.to_dtype(dtype)?)
}

/// Bilinear resize of an NCHW tensor, expressed as two matmuls.
pub fn resize_bilinear(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rows = bilinear_matrix(out_h, h, x.dtype(), x.device())?;
    let cols = bilinear_matrix(out_w, w, x.dtype(), x.device())?.t()?;
    let x = rows.broadcast_matmul(&x.contiguous()?)?;
    Ok(x.broadcast_matmul(&cols)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

/// NCHW to NHWC and back.
pub fn to_channels_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute((0, 2, 3, 1))?.contiguous()?)
}

pub fn to_channels_first(x: &Tensor) -> Result<Tensor> {
    Ok(x.permute((0, 3, 1, 2))?.contiguous()?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, path: &Path, inp: usize, out: usize, bias: bool) -> Result<Self> {
        let weight = store.get(&path.param("weight"), &[out, inp], Init::TruncNormal { std: 0.02 })?;
        let bias = if bias {
            Some(store.get(&path.param("bias"), &[out], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

/// Layer normalization over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, path: &Path, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.get(&path.param("weight"), &[dim], Init::Ones)?,
            bias: store.get(&path.param("bias"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Per-sample, per-channel normalization over the spatial axes of NCHW input.
#[derive(Debug, Clone)]
pub struct InstanceNorm2d {
    weight: Tensor,
    bias: Tensor,
}

impl InstanceNorm2d {
    pub fn new(store: &mut ParamStore, path: &Path, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.get(&path.param("weight"), &[channels], Init::Ones)?,
            bias: store.get(&path.param("bias"), &[channels], Init::Zeros)?,
        })
    }

    /// The normalized map before the affine terms are applied.
    ///
    /// Statistics are accumulated in f64: an f32 mean of a flat channel is
    /// off by rounding, and dividing that residue by `sqrt(eps)` would turn it
    /// into a size-dependent offset. In f64 a flat channel centers to exactly 0.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let dtype = x.dtype();
        let flat = x.reshape((b, c, h * w))?.to_dtype(DType::F64)?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let centered = flat.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        Ok(normed.to_dtype(dtype)?.reshape((b, c, h, w))?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.weight.dim(0)?;
        let normed = self.normalize(x)?;
        let w = self.weight.reshape((1, c, 1, 1))?;
        let b = self.bias.reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&w)?.broadcast_add(&b)?)
    }
}

/// Per-sample normalization over channels and space jointly (one group),
/// with per-channel affine terms. Unlike [`InstanceNorm2d`] it stays well
/// conditioned on spatially flat maps, where a per-channel variance is only
/// rounding noise.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    weight: Tensor,
    bias: Tensor,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, path: &Path, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.get(&path.param("weight"), &[channels], Init::Ones)?,
            bias: store.get(&path.param("bias"), &[channels], Init::Zeros)?,
        })
    }

    /// Statistics in f64, as in [`InstanceNorm2d::normalize`]; over a whole
    /// map an f32 sum drifts with the map size.
    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let dtype = x.dtype();
        let flat = x.reshape((b, c * h * w))?.to_dtype(DType::F64)?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let centered = flat.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + NORM_EPS)?.sqrt()?)?;
        Ok(normed.to_dtype(dtype)?.reshape((b, c, h, w))?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.weight.dim(0)?;
        let normed = self.normalize(x)?;
        let w = self.weight.reshape((1, c, 1, 1))?;
        let b = self.bias.reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&w)?.broadcast_add(&b)?)
    }
}

/// 2-D convolution with reflection padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        path: &Path,
        inp: usize,
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = inp * kernel * kernel;
        let weight = store.get(
            &path.param("weight"),
            &[out, inp, kernel, kernel],
            Init::FanInUniform { fan_in },
        )?;
        let bias = store.get(&path.param("bias"), &[out], Init::FanInUniform { fan_in })?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.padding;
        let x = reflect_pad2d(x, p, p, p, p)?;
        let y = x.conv2d(&self.weight, 0, self.stride, 1, 1)?;
        let c = self.out_channels();
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// 1x1 convolution expressed as a channel matmul. Weights keep the
/// `(out, in, 1, 1)` convolution layout.
#[derive(Debug, Clone)]
pub struct PointwiseConv {
    weight: Tensor,
    bias: Tensor,
}

impl PointwiseConv {
    pub fn new(store: &mut ParamStore, path: &Path, inp: usize, out: usize) -> Result<Self> {
        let init = Init::FanInUniform { fan_in: inp };
        Ok(Self {
            weight: store.get(&path.param("weight"), &[out, inp, 1, 1], init)?,
            bias: store.get(&path.param("bias"), &[out], init)?,
        })
    }

    /// `(B, in, N)` to `(B, out, N)`.
    pub fn forward_flat(&self, x: &Tensor) -> Result<Tensor> {
        let (out, inp, _, _) = self.weight.dims4()?;
        let w = self.weight.reshape((out, inp))?;
        Ok(w.broadcast_matmul(x)?.broadcast_add(&self.bias.reshape((out, 1))?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let y = self.forward_flat(&x.reshape((b, c, h * w))?)?;
        let out = y.dim(1)?;
        Ok(y.reshape((b, out, h, w))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_matches_reflect_convention() {
        // n = 4, pad 3: 3 2 1 | 0 1 2 3 | 2 1 0
        let idx: Vec<usize> = (0..10).map(|i| mirror_index(i, 3, 4)).collect();
        assert_eq!(idx, [3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        // pads wider than the signal keep bouncing
        let idx: Vec<usize> = (0..8).map(|i| mirror_index(i, 0, 3)).collect();
        assert_eq!(idx, [0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(mirror_index(5, 2, 1), 0);
    }

    #[test]
    fn bilinear_rows_are_convex_weights() {
        let m = bilinear_matrix(7, 3, DType::F64, &Device::Cpu).unwrap();
        for row in m.to_vec2::<f64>().unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bilinear_2x_matches_half_pixel_reference() {
        // Reference values from the half-pixel rule: [1, 3] -> [1, 1.5, 2.5, 3].
        let x = Tensor::new(&[1f64, 3.0], &Device::Cpu).unwrap().reshape((1, 1, 1, 2)).unwrap();
        let y = resize_bilinear(&x, 1, 4).unwrap();
        assert_eq!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap(), [1.0, 1.5, 2.5, 3.0]);
    }

    #[test]
    fn reflect_pad_of_constant_is_constant() {
        let x = Tensor::full(2.5f32, (1, 2, 3, 3), &Device::Cpu).unwrap();
        let y = reflect_pad2d(&x, 3, 3, 3, 3).unwrap();
        assert_eq!(y.dims(), [1, 2, 9, 9]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|&a| a == 2.5));
    }

    #[test]
    fn instance_norm_standardizes_each_channel() {
        let mut store = ParamStore::new(0, DType::F64, Device::Cpu);
        let norm = InstanceNorm2d::new(&mut store, &Path::root("n"), 2).unwrap();
        let x = Tensor::randn(3f64, 2.0, (2, 2, 5, 5), &Device::Cpu).unwrap();
        let y = norm.normalize(&x).unwrap().reshape((4, 25)).unwrap();
        for row in y.to_vec2::<f64>().unwrap() {
            let mean = row.iter().sum::<f64>() / 25.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 25.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn instance_norm_centers_flat_f32_channels_exactly() {
        let mut store = ParamStore::new(0, DType::F32, Device::Cpu);
        let norm = InstanceNorm2d::new(&mut store, &Path::root("n"), 1).unwrap();
        for side in [7usize, 112, 224] {
            let x = Tensor::full(0.3f32, (1, 1, side, side), &Device::Cpu).unwrap();
            let y = norm.normalize(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(y.iter().all(|&v| v == 0.0), "side {side}");
        }
    }

    #[test]
    fn group_norm_standardizes_each_sample() {
        let mut store = ParamStore::new(0, DType::F64, Device::Cpu);
        let norm = GroupNorm::new(&mut store, &Path::root("g"), 3).unwrap();
        let x = Tensor::randn(-1f64, 3.0, (2, 3, 4, 4), &Device::Cpu).unwrap();
        let y = norm.normalize(&x).unwrap().reshape((2, 48)).unwrap();
        for row in y.to_vec2::<f64>().unwrap() {
            let mean = row.iter().sum::<f64>() / 48.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 48.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-3);
        }
        // a flat map with distinct channel levels is left flat
        let flat = Tensor::new(&[1.0f64, 2.0, 4.0], &Device::Cpu)
            .unwrap()
            .reshape((1, 3, 1, 1))
            .unwrap()
            .broadcast_as((1, 3, 5, 5))
            .unwrap()
            .contiguous()
            .unwrap();
        let y = norm.normalize(&flat).unwrap().reshape((3, 25)).unwrap().to_vec2::<f64>().unwrap();
        for row in y {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }
}
