//! Tensor inventory of the official Swin-Tiny (patch 4, window 7, 224px)
//! ImageNet checkpoint, as produced by the conversion tool.

use crate::pretrained::manifest::ElementType;

pub const SWIN_TINY_DEPTHS: [usize; 4] = [2, 2, 6, 2];
pub const SWIN_TINY_HEADS: [usize; 4] = [3, 6, 12, 24];
pub const SWIN_TINY_EMBED: usize = 96;
const WINDOW: usize = 7;
const RESOLUTION: usize = 56;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceTensor {
    pub name: String,
    pub dtype: ElementType,
    pub shape: Vec<usize>,
}

fn push(out: &mut Vec<ReferenceTensor>, name: String, dtype: ElementType, shape: &[usize]) {
    out.push(ReferenceTensor {
        name,
        dtype,
        shape: shape.to_vec(),
    });
}

/// Every entry of the checkpoint's state dict, in state-dict order.
pub fn swin_tiny_inventory() -> Vec<ReferenceTensor> {
    use ElementType::{F32, I64};
    let mut out = Vec::new();
    let e = SWIN_TINY_EMBED;
    push(&mut out, "patch_embed.proj.weight".into(), F32, &[e, 3, 4, 4]);
    push(&mut out, "patch_embed.proj.bias".into(), F32, &[e]);
    push(&mut out, "patch_embed.norm.weight".into(), F32, &[e]);
    push(&mut out, "patch_embed.norm.bias".into(), F32, &[e]);
    let n = WINDOW * WINDOW;
    let span = 2 * WINDOW - 1;
    for layer in 0..4 {
        let dim = e << layer;
        let heads = SWIN_TINY_HEADS[layer];
        let res = RESOLUTION >> layer;
        for block in 0..SWIN_TINY_DEPTHS[layer] {
            let p = format!("layers.{layer}.blocks.{block}");
            if block % 2 == 1 && res > WINDOW {
                let windows = (res / WINDOW) * (res / WINDOW);
                push(&mut out, format!("{p}.attn_mask"), F32, &[windows, n, n]);
            }
            push(&mut out, format!("{p}.norm1.weight"), F32, &[dim]);
            push(&mut out, format!("{p}.norm1.bias"), F32, &[dim]);
            push(&mut out, format!("{p}.attn.relative_position_bias_table"), F32, &[span * span, heads]);
            push(&mut out, format!("{p}.attn.relative_position_index"), I64, &[n, n]);
            push(&mut out, format!("{p}.attn.qkv.weight"), F32, &[3 * dim, dim]);
            push(&mut out, format!("{p}.attn.qkv.bias"), F32, &[3 * dim]);
            push(&mut out, format!("{p}.attn.proj.weight"), F32, &[dim, dim]);
            push(&mut out, format!("{p}.attn.proj.bias"), F32, &[dim]);
            push(&mut out, format!("{p}.norm2.weight"), F32, &[dim]);
            push(&mut out, format!("{p}.norm2.bias"), F32, &[dim]);
            push(&mut out, format!("{p}.mlp.fc1.weight"), F32, &[4 * dim, dim]);
            push(&mut out, format!("{p}.mlp.fc1.bias"), F32, &[4 * dim]);
            push(&mut out, format!("{p}.mlp.fc2.weight"), F32, &[dim, 4 * dim]);
            push(&mut out, format!("{p}.mlp.fc2.bias"), F32, &[dim]);
        }
        if layer < 3 {
            let p = format!("layers.{layer}.downsample");
            push(&mut out, format!("{p}.reduction.weight"), F32, &[2 * dim, 4 * dim]);
            push(&mut out, format!("{p}.norm.weight"), F32, &[4 * dim]);
            push(&mut out, format!("{p}.norm.bias"), F32, &[4 * dim]);
        }
    }
    push(&mut out, "norm.weight".into(), F32, &[8 * e]);
    push(&mut out, "norm.bias".into(), F32, &[8 * e]);
    push(&mut out, "head.weight".into(), F32, &[1000, 8 * e]);
    push(&mut out, "head.bias".into(), F32, &[1000]);
    out
}
