//! Swin-UNet encoder, parallel cross-attention modules and decoder.
//!
//! Data flows as channel-major `(B, C, H, W)` [`FeatureMap`]s:
//!
//! ```text
//! image -> stem (1/2) -> patch embed (1/4) -> stage 2 (1/4) -> stage 3 (1/8)
//!       -> stage 4 (1/16) -> stage 5 (1/32) -> position attention
//!       -> 4 x [fusion with skip + 2 conv] -> upsample -> 1x1 head -> logits
//! ```

pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod swin;
pub mod window;

use candle_core::{DType, Device, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Path};

use attention::FusionGates;
use decoder::Decoder;
use encoder::{PatchEmbed, Stem};
use swin::SwinStage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Input,
    /// Encoder stage, 1..=5.
    Encoder(usize),
    /// Decoder level, numbered like the encoder level it fuses with.
    Decoder(usize),
    Logits,
    Untagged,
}

/// A batch of channel-major feature grids.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    data: Tensor,
    level: Level,
}

impl FeatureMap {
    pub fn new(data: Tensor, level: Level) -> Self {
        Self { data, level }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        self.data
            .dims4()
            .map_err(|_| Error::Shape(format!("feature map must be 4-D, got {:?}", self.data.dims())))
    }
}

/// One feature map per encoder stage, shallowest first.
#[derive(Debug, Clone)]
pub struct SkipPyramid {
    levels: Vec<FeatureMap>,
}

impl SkipPyramid {
    pub fn new(levels: Vec<FeatureMap>) -> Self {
        Self { levels }
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }
}

/// The full segmentation network and the parameters it owns.
pub struct SwinUNet {
    config: ModelConfig,
    seed: u64,
    store: ParamStore,
    stem: Stem,
    patch_embed: PatchEmbed,
    stages: Vec<SwinStage>,
    decoder: Decoder,
}

/// Builds a float32 CPU model.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<SwinUNet> {
    SwinUNet::new(config, seed, DType::F32, &Device::Cpu)
}

impl SwinUNet {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed, dtype, device.clone());
        let d = &config.stage_dims;
        let stem = Stem::new(
            &mut store,
            &Path::root("stem"),
            config.in_channels,
            d[0],
            config.stem_kernel,
            config.stem_stride,
            config.stem_padding,
        )?;
        let patch_embed = PatchEmbed::new(&mut store, &Path::root("patch_embed"), d[0], d[1], config.patch_size)?;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let stage = i + 2;
            let in_dim = if i == 0 { d[1] } else { d[i] };
            stages.push(SwinStage::new(
                &mut store,
                &Path::root(&format!("stage{stage}")),
                stage,
                in_dim,
                d[i + 1],
                config.stage_blocks[i],
                config.num_heads[i],
                config.window_size,
                config.mlp_ratio,
            )?);
        }
        let decoder = Decoder::new(&mut store, &Path::root("decoder"), d, config.out_channels)?;
        Ok(Self {
            config: config.clone(),
            seed,
            store,
            stem,
            patch_embed,
            stages,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn stem(&self) -> &Stem {
        &self.stem
    }

    pub fn stages(&self) -> &[SwinStage] {
        &self.stages
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    /// An independent copy with identical parameter values.
    pub fn try_clone(&self) -> Result<Self> {
        let copy = Self::new(&self.config, self.seed, self.dtype(), self.device())?;
        copy.store.copy_from(&self.store)?;
        Ok(copy)
    }

    /// Wraps an image batch, casting it to the model's dtype and device.
    pub fn input(&self, images: &Tensor) -> Result<FeatureMap> {
        let x = images.to_dtype(self.dtype())?.to_device(self.device())?;
        Ok(FeatureMap::new(x, Level::Input))
    }

    pub fn stem_forward(&self, images: &FeatureMap) -> Result<FeatureMap> {
        self.stem.forward(images)
    }

    pub fn patch_embed_forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        self.patch_embed.forward(fm)
    }

    /// Runs Swin stage `stage_index` (2..=5).
    pub fn swin_stage_forward(&self, fm: &FeatureMap, stage_index: usize) -> Result<FeatureMap> {
        self.stage(stage_index)?.forward(fm)
    }

    pub fn stage(&self, stage_index: usize) -> Result<&SwinStage> {
        if !(2..=5).contains(&stage_index) {
            return Err(Error::Value(format!("Swin stages are numbered 2..=5, got {stage_index}")));
        }
        Ok(&self.stages[stage_index - 2])
    }

    pub fn pab_forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        self.decoder.pab.forward(fm)
    }

    /// Fusion at decoder step `step` (1..=4, deepest first).
    pub fn mfab_forward(&self, step: usize, low: &FeatureMap, high: &FeatureMap) -> Result<FeatureMap> {
        self.fusion(step)?.forward(low, high)
    }

    pub fn mfab_gates(&self, step: usize, low: &FeatureMap, high: &FeatureMap) -> Result<FusionGates> {
        self.fusion(step)?.gates(low, high)
    }

    fn fusion(&self, step: usize) -> Result<&attention::MultiScaleFusion> {
        if !(1..=4).contains(&step) {
            return Err(Error::Value(format!("decoder steps are numbered 1..=4, got {step}")));
        }
        Ok(&self.decoder.steps[step - 1].fusion)
    }

    fn check_input(&self, images: &FeatureMap) -> Result<()> {
        let (_, c, h, w) = images.dims()?;
        let stride = self.config.total_stride();
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} is not divisible by {stride}; pad the image to a multiple of {stride}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, images: &FeatureMap) -> Result<SkipPyramid> {
        self.check_input(images)?;
        let s1 = self.stem.forward(images)?;
        let mut x = self.patch_embed.forward(&s1)?;
        let mut levels = vec![s1];
        for stage in &self.stages {
            x = stage.forward(&x)?;
            levels.push(x.clone());
        }
        Ok(SkipPyramid::new(levels))
    }

    pub fn decoder_forward(&self, pyramid: &SkipPyramid, output_size: (usize, usize)) -> Result<FeatureMap> {
        self.decoder.forward(pyramid, output_size)
    }

    /// Per-pixel logits `(B, out_channels, H, W)` for a normalized image batch.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let input = self.input(images)?;
        let (_, _, h, w) = input.dims()?;
        let pyramid = self.encode(&input)?;
        Ok(self.decoder.forward(&pyramid, (h, w))?.into_tensor())
    }
}

impl std::fmt::Debug for SwinUNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SwinUNet")
            .field("config", &self.config)
            .field("params", &self.store)
            .finish()
    }
}
