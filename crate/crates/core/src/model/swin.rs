//! Shifted-window transformer blocks, patch merging and encoder stages.

use candle_core::{Device, Tensor, D};

use crate::error::{Error, Result};
use crate::model::window::{
    attention_mask, pad_tokens, padded_extent, partition_tokens, reverse_tokens,
};
use crate::model::{FeatureMap, Level};
use crate::nn::{gelu, softmax_last, to_channels_first, to_channels_last, LayerNorm, Linear};
use crate::params::{Init, ParamStore, Path};

/// Flattened index into the `(2w-1)^2` relative position table for every
/// (query, key) pair of a `w x w` window.
pub fn relative_position_index(window: usize) -> Vec<u32> {
    let n = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(n * n);
    for q in 0..n {
        let (qr, qc) = (q / window, q % window);
        for k in 0..n {
            let (kr, kc) = (k / window, k % window);
            let dr = qr + window - 1 - kr;
            let dc = qc + window - 1 - kc;
            idx.push((dr * span + dc) as u32);
        }
    }
    idx
}

/// Multi-head self-attention within windows, with a learned relative
/// position bias.
#[derive(Debug, Clone)]
pub struct WindowAttention {
    qkv: Linear,
    proj: Linear,
    bias_table: Tensor,
    bias_index: Tensor,
    num_heads: usize,
    window: usize,
    scale: f64,
}

impl WindowAttention {
    pub fn new(store: &mut ParamStore, path: &Path, dim: usize, num_heads: usize, window: usize) -> Result<Self> {
        let span = 2 * window - 1;
        let bias_table = store.get(
            &path.param("relative_position_bias_table"),
            &[span * span, num_heads],
            Init::TruncNormal { std: 0.02 },
        )?;
        let index = relative_position_index(window);
        Ok(Self {
            qkv: Linear::new(store, &path.join("qkv"), dim, 3 * dim, true)?,
            proj: Linear::new(store, &path.join("proj"), dim, dim, true)?,
            bias_table,
            bias_index: Tensor::new(index.as_slice(), store.device())?,
            num_heads,
            window,
            scale: ((dim / num_heads) as f64).powf(-0.5),
        })
    }

    fn position_bias(&self) -> Result<Tensor> {
        let n = self.window * self.window;
        let bias = self.bias_table.index_select(&self.bias_index, 0)?;
        Ok(bias.reshape((n, n, self.num_heads))?.permute((2, 0, 1))?.contiguous()?)
    }

    /// Attention probabilities `(B*nW, heads, N, N)` plus the value tensor.
    fn probs_and_values(&self, windows: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let (bn, n, c) = windows.dims3()?;
        let hd = c / self.num_heads;
        let qkv = self
            .qkv
            .forward(windows)?
            .reshape((bn, n, 3, self.num_heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = (qkv.get(0)?.contiguous()? * self.scale)?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut scores = q.matmul(&k.t()?)?.broadcast_add(&self.position_bias()?)?;
        if let Some(mask) = mask {
            let nw = mask.dim(0)?;
            scores = scores
                .reshape((bn / nw, nw, self.num_heads, n, n))?
                .broadcast_add(&mask.unsqueeze(1)?.unsqueeze(0)?)?
                .reshape((bn, self.num_heads, n, n))?;
        }
        Ok((softmax_last(&scores)?, v))
    }

    pub fn attention_probs(&self, windows: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.probs_and_values(windows, mask)?.0)
    }

    pub fn forward(&self, windows: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (bn, n, c) = windows.dims3()?;
        let (probs, v) = self.probs_and_values(windows, mask)?;
        let out = probs.matmul(&v)?.transpose(1, 2)?.reshape((bn, n, c))?;
        self.proj.forward(&out)
    }
}

#[derive(Debug, Clone)]
struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&gelu(&self.fc1.forward(x)?)?)
    }
}

/// Pre-norm transformer block over (optionally shifted) windows.
#[derive(Debug, Clone)]
pub struct SwinBlock {
    norm1: LayerNorm,
    attn: WindowAttention,
    norm2: LayerNorm,
    mlp: Mlp,
    window: usize,
    shift: usize,
}

impl SwinBlock {
    pub fn new(
        store: &mut ParamStore,
        path: &Path,
        dim: usize,
        num_heads: usize,
        window: usize,
        shift: usize,
        mlp_hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &path.join("norm1"), dim)?,
            attn: WindowAttention::new(store, &path.join("attn"), dim, num_heads, window)?,
            norm2: LayerNorm::new(store, &path.join("norm2"), dim)?,
            mlp: Mlp {
                fc1: Linear::new(store, &path.join("mlp.fc1"), dim, mlp_hidden, true)?,
                fc2: Linear::new(store, &path.join("mlp.fc2"), mlp_hidden, dim, true)?,
            },
            window,
            shift,
        })
    }

    /// Shift actually applied to an `h x w` grid. A grid that fits inside a
    /// single window along its short side is attended without shifting.
    pub fn effective_shift(&self, h: usize, w: usize) -> usize {
        if h.min(w) <= self.window {
            0
        } else {
            self.shift
        }
    }

    fn windows_and_mask(&self, x: &Tensor) -> Result<(Tensor, Option<Tensor>, usize, (usize, usize))> {
        let (_, h, w, _) = x.dims4()?;
        let shift = self.effective_shift(h, w);
        let mut xp = pad_tokens(x, self.window)?;
        let padded = (padded_extent(h, self.window), padded_extent(w, self.window));
        if shift > 0 {
            xp = xp.roll(-(shift as i32), 1)?.roll(-(shift as i32), 2)?;
        }
        let windows = partition_tokens(&xp, self.window)?;
        let mask = match attention_mask((h, w), padded, self.window, shift) {
            Some(m) => {
                let n = self.window * self.window;
                let nw = (padded.0 / self.window) * (padded.1 / self.window);
                let t = Tensor::from_vec(m, (nw, n, n), &Device::Cpu)?
                    .to_dtype(x.dtype())?
                    .to_device(x.device())?;
                Some(t)
            }
            None => None,
        };
        Ok((windows, mask, shift, padded))
    }

    /// Attention probabilities of this block for channels-last input.
    pub fn attention_probs(&self, x: &Tensor) -> Result<Tensor> {
        let (windows, mask, _, _) = self.windows_and_mask(&self.norm1.forward(x)?)?;
        self.attn.attention_probs(&windows, mask.as_ref())
    }

    /// Channels-last `(B, H, W, C)` in and out.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        let (windows, mask, shift, padded) = self.windows_and_mask(&self.norm1.forward(x)?)?;
        let attended = self.attn.forward(&windows, mask.as_ref())?;
        let mut y = reverse_tokens(&attended, self.window, padded.0, padded.1)?;
        if shift > 0 {
            y = y.roll(shift as i32, 1)?.roll(shift as i32, 2)?;
        }
        if padded != (h, w) {
            y = y.narrow(1, 0, h)?.narrow(2, 0, w)?;
        }
        debug_assert_eq!(y.dims(), [b, h, w, c]);
        let x = (x + y)?;
        let y = self.mlp.forward(&self.norm2.forward(&x)?)?;
        Ok((x + y)?)
    }
}

/// 2x2 neighbourhood concatenation followed by a linear reduction to twice
/// the input width.
#[derive(Debug, Clone)]
pub struct PatchMerging {
    norm: LayerNorm,
    reduction: Linear,
}

impl PatchMerging {
    pub fn new(store: &mut ParamStore, path: &Path, dim: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(store, &path.join("norm"), 4 * dim)?,
            reduction: Linear::new(store, &path.join("reduction"), 4 * dim, 2 * dim, false)?,
        })
    }

    /// Channels-last in and out.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, h, w, c) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("patch merging needs even sides, got {h}x{w}")));
        }
        // Concatenation order (row parity fastest) is the one the pretrained
        // reduction weights were trained with: (0,0), (1,0), (0,1), (1,1).
        let x = x
            .reshape((b, h / 2, 2, w / 2, 2, c))?
            .permute((0, 1, 3, 4, 2, 5))?
            .contiguous()?
            .reshape((b, h / 2, w / 2, 4 * c))?;
        self.reduction.forward(&self.norm.forward(&x)?)
    }
}

/// One encoder stage: optional patch merging, then alternating regular and
/// shifted window blocks.
#[derive(Debug, Clone)]
pub struct SwinStage {
    merge: Option<PatchMerging>,
    blocks: Vec<SwinBlock>,
    in_dim: usize,
    out_dim: usize,
    stage: usize,
}

impl SwinStage {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        path: &Path,
        stage: usize,
        in_dim: usize,
        out_dim: usize,
        depth: usize,
        num_heads: usize,
        window: usize,
        mlp_ratio: f64,
    ) -> Result<Self> {
        let merge = if in_dim != out_dim {
            if out_dim != 2 * in_dim {
                return Err(Error::Config(format!(
                    "stage {stage}: merging maps {in_dim} to {}, not {out_dim}",
                    2 * in_dim
                )));
            }
            Some(PatchMerging::new(store, &path.join("merge"), in_dim)?)
        } else {
            None
        };
        let hidden = ((out_dim as f64) * mlp_ratio).round() as usize;
        let blocks = (0..depth)
            .map(|i| {
                let shift = if i % 2 == 1 { window / 2 } else { 0 };
                SwinBlock::new(
                    store,
                    &path.join("blocks").join(i),
                    out_dim,
                    num_heads,
                    window,
                    shift,
                    hidden,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            merge,
            blocks,
            in_dim,
            out_dim,
            stage,
        })
    }

    pub fn blocks(&self) -> &[SwinBlock] {
        &self.blocks
    }

    pub fn has_merge(&self) -> bool {
        self.merge.is_some()
    }

    fn check_input(&self, fm: &FeatureMap) -> Result<()> {
        let (_, c, _, _) = fm.dims()?;
        if c != self.in_dim {
            return Err(Error::Shape(format!(
                "stage {} expects {} input channels, got {c}",
                self.stage, self.in_dim
            )));
        }
        Ok(())
    }

    fn merged_tokens(&self, fm: &FeatureMap) -> Result<Tensor> {
        self.check_input(fm)?;
        let x = to_channels_last(fm.tensor())?;
        match &self.merge {
            Some(m) => m.forward(&x),
            None => Ok(x),
        }
    }

    pub fn forward(&self, fm: &FeatureMap) -> Result<FeatureMap> {
        let mut x = self.merged_tokens(fm)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        Ok(FeatureMap::new(to_channels_first(&x)?, Level::Encoder(self.stage)))
    }

    /// Runs the stage and collects every block's attention probabilities.
    pub fn forward_with_attention(&self, fm: &FeatureMap) -> Result<(FeatureMap, Vec<Tensor>)> {
        let mut x = self.merged_tokens(fm)?;
        let mut maps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            maps.push(block.attention_probs(&x)?);
            x = block.forward(&x)?;
        }
        Ok((FeatureMap::new(to_channels_first(&x)?, Level::Encoder(self.stage)), maps))
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
}

/// Largest deviation of any attention row sum from 1.
pub fn max_row_sum_error(probs: &Tensor) -> Result<f64> {
    let sums = probs.to_dtype(candle_core::DType::F64)?.sum(D::Minus1)?;
    Ok((sums - 1.0)?.abs()?.max_all()?.to_scalar::<f64>()?)
}
