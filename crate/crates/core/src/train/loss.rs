//! Segmentation losses on raw logits.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Smoothing term of the soft Dice loss.
pub const DICE_SMOOTH: f64 = 1.0;

fn check_shapes(logits: &Tensor, targets: &Tensor) -> Result<()> {
    if logits.dims() != targets.dims() {
        return Err(Error::Shape(format!(
            "logits {:?} and targets {:?} differ in shape",
            logits.dims(),
            targets.dims()
        )));
    }
    Ok(())
}

/// Soft Dice loss over the whole batch: `1 - (2 sum(p t) + s) / (sum p + sum t + s)`.
pub fn dice_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_shapes(logits, targets)?;
    let targets = targets.to_dtype(logits.dtype())?;
    let p = sigmoid(logits)?;
    let inter = (&p * &targets)?.sum_all()?;
    let denom = ((p.sum_all()? + targets.sum_all()?)? + DICE_SMOOTH)?;
    let ratio = ((inter * 2.0)? + DICE_SMOOTH)?.div(&denom)?;
    Ok(ratio.affine(-1.0, 1.0)?)
}

/// Mean binary cross-entropy, `max(x, 0) - x t + ln(1 + exp(-|x|))`, which
/// never exponentiates a positive number.
pub fn bce_loss(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    check_shapes(logits, targets)?;
    let targets = targets.to_dtype(logits.dtype())?;
    let softplus_tail = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    let per_pixel = ((logits.relu()? - (logits * &targets)?)? + softplus_tail)?;
    Ok(per_pixel.mean_all()?)
}

#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Tensor,
    pub dice: f64,
    pub bce: f64,
}

pub fn composite_loss(logits: &Tensor, targets: &Tensor, dice_weight: f64, bce_weight: f64) -> Result<LossParts> {
    let dice = dice_loss(logits, targets)?;
    let bce = bce_loss(logits, targets)?;
    let total = ((&dice * dice_weight)? + (&bce * bce_weight)?)?;
    Ok(LossParts {
        dice: dice.to_dtype(candle_core::DType::F64)?.to_scalar()?,
        bce: bce.to_dtype(candle_core::DType::F64)?.to_scalar()?,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn scalar(x: Tensor) -> f64 {
        x.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn dice_half_probability_hand_value() {
        // p = 0.5 everywhere, t = [1, 1, 0, 0]: 1 - (2*1 + 1) / (2 + 2 + 1)
        let loss = scalar(dice_loss(&t(&[0.0; 4]), &t(&[1.0, 1.0, 0.0, 0.0])).unwrap());
        assert!((loss - 0.4).abs() < 1e-12);
    }

    #[test]
    fn dice_limits() {
        let perfect = scalar(dice_loss(&t(&[1e3, 1e3, -1e3, -1e3]), &t(&[1.0, 1.0, 0.0, 0.0])).unwrap());
        assert!(perfect.abs() < 1e-12);
        let empty = scalar(dice_loss(&t(&[-1e3; 4]), &t(&[0.0; 4])).unwrap());
        assert!(empty.abs() < 1e-12);
    }

    #[test]
    fn bce_values() {
        let l = scalar(bce_loss(&t(&[0.0, 0.0]), &t(&[1.0, 0.0])).unwrap());
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = scalar(bce_loss(&t(&[50.0]), &t(&[1.0])).unwrap());
        assert!(l >= 0.0 && l < 1e-20);
        // softplus(-x) at x = -50 is 50 + ln(1 + e^-50)
        let l = scalar(bce_loss(&t(&[-50.0]), &t(&[1.0])).unwrap());
        assert!((l - (50.0 + (-50f64).exp().ln_1p())).abs() < 1e-12);
        assert!(bce_loss(&t(&[0.0]), &t(&[0.0, 1.0])).is_err());
    }
}
