//! Overlap metrics on binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pixel counts from which Dice and IoU follow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub predicted: u64,
    pub truth: u64,
    pub intersection: u64,
}

impl OverlapCounts {
    pub fn from_masks(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "masks hold {} and {} pixels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            if p > 1 || t > 1 {
                return Err(Error::Value(format!("mask values must be 0 or 1, found {}", p.max(t))));
            }
            c.predicted += p as u64;
            c.truth += t as u64;
            c.intersection += (p & t) as u64;
        }
        Ok(c)
    }

    pub fn union(&self) -> u64 {
        self.predicted + self.truth - self.intersection
    }

    /// `2|A n B| / (|A| + |B|)`, 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = self.predicted + self.truth;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }

    /// `|A n B| / |A u B|`, 1 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.union();
        if union == 0 {
            1.0
        } else {
            self.intersection as f64 / union as f64
        }
    }
}

pub fn dice_score(pred: &[u8], truth: &[u8]) -> Result<f64> {
    Ok(OverlapCounts::from_masks(pred, truth)?.dice())
}

pub fn iou_score(pred: &[u8], truth: &[u8]) -> Result<f64> {
    Ok(OverlapCounts::from_masks(pred, truth)?.iou())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: u64,
    pub mean_loss: f64,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub wall_seconds: f64,
    /// Mean Dice over the validation images, when a split exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_dice: Option<f64>,
}

pub const METRICS_CSV_HEADER: &str = "epoch,mean_loss,mean_dice,mean_iou,wall_seconds";

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.3}",
            self.epoch, self.mean_loss, self.mean_dice, self.mean_iou, self.wall_seconds
        )
    }
}
