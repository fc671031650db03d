//! Architecture hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architectural hyperparameters of the segmentation network.
///
/// `stage_dims[0]` is the stem width, `stage_dims[1..]` the widths of the four
/// Swin stages. `stage_blocks` and `num_heads` are indexed by Swin stage
/// (stages 2 through 5).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stage_dims: Vec<usize>,
    pub stage_blocks: Vec<usize>,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub patch_size: usize,
    pub window_size: usize,
    pub num_heads: Vec<usize>,
    pub mlp_ratio: f64,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_dims: vec![48, 96, 192, 384, 768],
            stage_blocks: vec![2, 2, 9, 2],
            stem_kernel: 7,
            stem_stride: 2,
            stem_padding: 3,
            patch_size: 2,
            window_size: 7,
            num_heads: vec![3, 6, 12, 24],
            mlp_ratio: 4.0,
            in_channels: 3,
            out_channels: 1,
        }
    }
}

impl ModelConfig {
    /// A narrow variant with the default depth layout, for CPU-scale experiments.
    pub fn reduced() -> Self {
        Self {
            stage_dims: vec![8, 16, 32, 64, 128],
            num_heads: vec![1, 2, 4, 8],
            ..Self::default()
        }
    }

    /// The smallest useful network: one block per stage (two in stage 4 so a
    /// shifted block is exercised) and very narrow channels.
    pub fn tiny() -> Self {
        Self {
            stage_dims: vec![4, 8, 16, 32, 64],
            stage_blocks: vec![1, 1, 2, 1],
            num_heads: vec![1, 1, 2, 2],
            mlp_ratio: 2.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.stage_dims.len() != 5 {
            return fail(format!(
                "stage_dims must list 5 stages, got {}",
                self.stage_dims.len()
            ));
        }
        if self.stage_blocks.len() != 4 {
            return fail(format!(
                "stage_blocks must list 4 Swin stages, got {}",
                self.stage_blocks.len()
            ));
        }
        if self.num_heads.len() != 4 {
            return fail(format!(
                "num_heads must list 4 Swin stages, got {}",
                self.num_heads.len()
            ));
        }
        let positive: [(&str, usize); 6] = [
            ("stem_kernel", self.stem_kernel),
            ("stem_stride", self.stem_stride),
            ("patch_size", self.patch_size),
            ("window_size", self.window_size),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
        ];
        for (name, value) in positive {
            if value == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if let Some(i) = self.stage_dims.iter().position(|&d| d == 0) {
            return fail(format!("stage_dims[{i}] must be positive"));
        }
        if let Some(i) = self.stage_blocks.iter().position(|&d| d == 0) {
            return fail(format!("stage_blocks[{i}] must be positive"));
        }
        if let Some(i) = self.num_heads.iter().position(|&d| d == 0) {
            return fail(format!("num_heads[{i}] must be positive"));
        }
        for i in 0..4 {
            if self.stage_dims[i + 1] != 2 * self.stage_dims[i] {
                return fail(format!(
                    "stage_dims[{}] = {} must equal 2 * stage_dims[{}] = {}",
                    i + 1,
                    self.stage_dims[i + 1],
                    i,
                    2 * self.stage_dims[i]
                ));
            }
            if self.stage_dims[i + 1] % self.num_heads[i] != 0 {
                return fail(format!(
                    "stage_dims[{}] = {} is not divisible by num_heads[{}] = {}",
                    i + 1,
                    self.stage_dims[i + 1],
                    i,
                    self.num_heads[i]
                ));
            }
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            return fail(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        if self.stem_padding >= self.stem_kernel {
            return fail(format!(
                "stem_padding {} must be smaller than stem_kernel {}",
                self.stem_padding, self.stem_kernel
            ));
        }
        Ok(())
    }

    pub fn total_swin_blocks(&self) -> usize {
        self.stage_blocks.iter().sum()
    }

    /// Total spatial reduction between the input and the deepest stage.
    pub fn total_stride(&self) -> usize {
        self.stem_stride * self.patch_size * 8
    }

    pub fn shift_size(&self) -> usize {
        self.window_size / 2
    }

    /// Hidden width of the MLP inside a Swin block of width `dim`.
    pub fn mlp_hidden(&self, dim: usize) -> usize {
        ((dim as f64) * self.mlp_ratio).round() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_published_layout() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.stage_dims, [48, 96, 192, 384, 768]);
        assert_eq!(cfg.stage_blocks, [2, 2, 9, 2]);
        assert_eq!(cfg.total_swin_blocks(), 15);
        assert_eq!(cfg.total_stride(), 32);
        assert_eq!(cfg.shift_size(), 3);
    }

    #[test]
    fn doubling_violation_is_named() {
        let cfg = ModelConfig {
            stage_dims: vec![48, 96, 192, 384, 700],
            ..ModelConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("stage_dims[4] = 700"), "{err}");
    }

    #[test]
    fn head_divisibility_and_lengths() {
        let cfg = ModelConfig {
            num_heads: vec![5, 6, 12, 24],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("num_heads[0]"));
        let cfg = ModelConfig {
            stage_blocks: vec![2, 2, 9],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        ModelConfig::reduced().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_with_partial_keys() {
        let cfg: ModelConfig = toml::from_str("window_size = 7\nstage_blocks = [1, 1, 1, 1]").unwrap();
        assert_eq!(cfg.stage_dims, ModelConfig::default().stage_dims);
        assert_eq!(cfg.stage_blocks, [1, 1, 1, 1]);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<ModelConfig>(&text).unwrap(), cfg);
    }
}
