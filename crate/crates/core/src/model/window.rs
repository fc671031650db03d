//! Window partitioning for windowed self-attention.
//!
//! Feature grids whose sides are not multiples of the window are zero-padded
//! on the bottom/right before partitioning. Padded tokens are excluded from
//! attention through [`attention_mask`] and cropped away after reversal.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::model::{FeatureMap, Level};
use crate::nn::{to_channels_first, to_channels_last};

/// Additive score for masked query/key pairs. Finite, so fully masked rows
/// (which only occur for padded queries) stay well defined.
pub const MASK_VALUE: f64 = -100.0;

/// Tokens grouped by window: `(batch * num_windows, window^2, channels)`,
/// batch-major.
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub windows: Tensor,
    pub window: usize,
    pub batch: usize,
    /// Padded grid size the windows tile exactly.
    pub padded: (usize, usize),
}

impl WindowSet {
    pub fn num_windows(&self) -> usize {
        (self.padded.0 / self.window) * (self.padded.1 / self.window)
    }
}

pub fn padded_extent(n: usize, window: usize) -> usize {
    n.div_ceil(window) * window
}

/// Partitions a channels-last `(B, H, W, C)` tensor whose sides are
/// multiples of `window`.
pub(crate) fn partition_tokens(x: &Tensor, window: usize) -> Result<Tensor> {
    let (b, h, w, c) = x.dims4()?;
    if h % window != 0 || w % window != 0 {
        return Err(Error::Shape(format!(
            "grid {h}x{w} is not a multiple of window {window}"
        )));
    }
    let x = x
        .reshape((b, h / window, window, w / window, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?;
    Ok(x.reshape((b * (h / window) * (w / window), window * window, c))?)
}

pub(crate) fn reverse_tokens(windows: &Tensor, window: usize, h: usize, w: usize) -> Result<Tensor> {
    let (bn, n, c) = windows.dims3()?;
    if n != window * window || h % window != 0 || w % window != 0 {
        return Err(Error::Shape(format!(
            "windows of {n} tokens do not tile a {h}x{w} grid with window {window}"
        )));
    }
    let per_image = (h / window) * (w / window);
    if bn % per_image != 0 {
        return Err(Error::Shape(format!(
            "{bn} windows is not a multiple of the {per_image} windows per image"
        )));
    }
    let b = bn / per_image;
    let x = windows
        .reshape((b, h / window, w / window, window, window, c))?
        .permute((0, 1, 3, 2, 4, 5))?
        .contiguous()?;
    Ok(x.reshape((b, h, w, c))?)
}

pub(crate) fn pad_tokens(x: &Tensor, window: usize) -> Result<Tensor> {
    let (_, h, w, _) = x.dims4()?;
    let ph = padded_extent(h, window) - h;
    let pw = padded_extent(w, window) - w;
    let mut x = x.clone();
    if ph > 0 {
        x = x.pad_with_zeros(1, 0, ph)?;
    }
    if pw > 0 {
        x = x.pad_with_zeros(2, 0, pw)?;
    }
    Ok(x)
}

/// Pads (if needed) and partitions a channel-major feature map.
pub fn window_partition(fm: &FeatureMap, window: usize) -> Result<WindowSet> {
    if window == 0 {
        return Err(Error::Shape("window must be positive".into()));
    }
    let (b, _, h, w) = fm.dims()?;
    let x = pad_tokens(&to_channels_last(fm.tensor())?, window)?;
    Ok(WindowSet {
        windows: partition_tokens(&x, window)?,
        window,
        batch: b,
        padded: (padded_extent(h, window), padded_extent(w, window)),
    })
}

/// Inverse of [`window_partition`]: reassembles the grid and crops padding.
pub fn window_reverse(ws: &WindowSet, spatial: (usize, usize)) -> Result<FeatureMap> {
    let (h, w) = spatial;
    if h == 0 || w == 0 || (padded_extent(h, ws.window), padded_extent(w, ws.window)) != ws.padded {
        return Err(Error::Shape(format!(
            "spatial size {h}x{w} is inconsistent with padded window grid {:?} (window {})",
            ws.padded, ws.window
        )));
    }
    let (bn, _, _) = ws.windows.dims3()?;
    if bn != ws.batch * ws.num_windows() {
        return Err(Error::Shape(format!(
            "{bn} windows, expected {} x {}",
            ws.batch,
            ws.num_windows()
        )));
    }
    let x = reverse_tokens(&ws.windows, ws.window, ws.padded.0, ws.padded.1)?;
    let x = x.narrow(1, 0, h)?.narrow(2, 0, w)?;
    Ok(FeatureMap::new(to_channels_first(&x)?, Level::Untagged))
}

/// Additive attention mask of shape `(num_windows, window^2, window^2)` for a
/// padded grid of `padded` covering `valid` real tokens, after a cyclic shift
/// of `shift`. Returns `None` when no pair needs masking.
pub fn attention_mask(
    valid: (usize, usize),
    padded: (usize, usize),
    window: usize,
    shift: usize,
) -> Option<Vec<f32>> {
    let (h, w) = valid;
    let (hp, wp) = padded;
    if shift == 0 && h == hp && w == wp {
        return None;
    }
    // Region label along one axis of the shifted grid, as in the reference
    // shifted-window scheme: [0, P-window), [P-window, P-shift), [P-shift, P).
    let region = |i: usize, p: usize| -> usize {
        if shift == 0 || i < p - window {
            0
        } else if i < p - shift {
            1
        } else {
            2
        }
    };
    // Token at shifted position (r, c) came from (r + shift, c + shift) mod P.
    let is_pad = |r: usize, c: usize| (r + shift) % hp >= h || (c + shift) % wp >= w;
    let n = window * window;
    let nh = hp / window;
    let nw = wp / window;
    let mut mask = vec![0f32; nh * nw * n * n];
    for wr in 0..nh {
        for wc in 0..nw {
            let base = (wr * nw + wc) * n * n;
            let coords: Vec<(usize, usize)> = (0..n)
                .map(|t| (wr * window + t / window, wc * window + t % window))
                .collect();
            for (qi, &(qr, qc)) in coords.iter().enumerate() {
                let qlabel = (region(qr, hp), region(qc, wp));
                for (ki, &(kr, kc)) in coords.iter().enumerate() {
                    let klabel = (region(kr, hp), region(kc, wp));
                    if qlabel != klabel || is_pad(kr, kc) {
                        mask[base + qi * n + ki] = MASK_VALUE as f32;
                    }
                }
            }
        }
    }
    Some(mask)
}
