use crate::error::{Error, Result};
use crate::model::attention::{MultiScaleFusion, PositionAttention};
use crate::model::{FeatureMap, Level, SkipPyramid};
use crate::nn::{gelu, resize_bilinear, Conv2d, GroupNorm, PointwiseConv};
use crate::params::{ParamStore, Path};

/// 3x3 convolution, single-group normalization, GELU.
#[derive(Debug, Clone)]
pub struct ConvNormAct {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvNormAct {
    pub fn new(store: &mut ParamStore, path: &Path, inp: usize, out: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &path.join("conv"), inp, out, 3, 1, 1)?,
            norm: GroupNorm::new(store, &path.join("norm"), out)?,
        })
    }

    pub fn forward(&self, x: &candle_core::Tensor) -> Result<candle_core::Tensor> {
        gelu(&self.norm.forward(&self.conv.forward(x)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct DecoderStep {
    pub fusion: MultiScaleFusion,
    conv1: ConvNormAct,
    conv2: ConvNormAct,
}

impl DecoderStep {
    pub fn forward(&self, low: &FeatureMap, high: &FeatureMap, level: usize) -> Result<FeatureMap> {
        let fused = self.fusion.forward(low, high)?;
        let x = self.conv2.forward(&self.conv1.forward(fused.tensor())?)?;
        Ok(FeatureMap::new(x, Level::Decoder(level)))
    }
}

/// Position attention on the deepest map, four fusion/upsampling steps back
/// to the stem resolution, then a final upsample and 1x1 head.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub pab: PositionAttention,
    pub steps: Vec<DecoderStep>,
    head: PointwiseConv,
    stage_dims: Vec<usize>,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, path: &Path, stage_dims: &[usize], out_channels: usize) -> Result<Self> {
        let pab = PositionAttention::new(store, &path.join("pab"), stage_dims[4])?;
        let mut steps = Vec::with_capacity(4);
        for k in 0..4 {
            // step k fuses encoder level 4-k (1-based) with the map above it
            let low = stage_dims[3 - k];
            let high = stage_dims[4 - k];
            let p = path.join(format!("up{}", k + 1));
            steps.push(DecoderStep {
                fusion: MultiScaleFusion::new(store, &p.join("mfab"), low, high)?,
                conv1: ConvNormAct::new(store, &p.join("conv1"), low, low)?,
                conv2: ConvNormAct::new(store, &p.join("conv2"), low, low)?,
            });
        }
        Ok(Self {
            pab,
            steps,
            head: PointwiseConv::new(store, &path.join("head"), stage_dims[0], out_channels)?,
            stage_dims: stage_dims.to_vec(),
        })
    }

    fn check(&self, pyramid: &SkipPyramid) -> Result<()> {
        let levels = pyramid.levels();
        if levels.len() != 5 {
            return Err(Error::Shape(format!("skip pyramid has {} levels, expected 5", levels.len())));
        }
        for (i, fm) in levels.iter().enumerate() {
            let (_, c, h, w) = fm.dims()?;
            if c != self.stage_dims[i] {
                return Err(Error::Shape(format!(
                    "skip level {} has {c} channels, expected {}",
                    i + 1,
                    self.stage_dims[i]
                )));
            }
            if i > 0 {
                let (_, _, ph, pw) = levels[i - 1].dims()?;
                if ph != 2 * h || pw != 2 * w {
                    return Err(Error::Shape(format!(
                        "skip level {} is {h}x{w}, expected half of {ph}x{pw}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Logits at `output_size`, normally the network input size.
    pub fn forward(&self, pyramid: &SkipPyramid, output_size: (usize, usize)) -> Result<FeatureMap> {
        self.check(pyramid)?;
        let levels = pyramid.levels();
        let mut x = self.pab.forward(&levels[4])?;
        for (k, step) in self.steps.iter().enumerate() {
            x = step.forward(&levels[3 - k], &x, 4 - k)?;
        }
        let up = resize_bilinear(x.tensor(), output_size.0, output_size.1)?;
        Ok(FeatureMap::new(self.head.forward(&up)?, Level::Logits))
    }
}
