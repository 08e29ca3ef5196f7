use crate::detector::boxes::{giou_tensor, BoxTensors};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower bound on `p_t` inside the focal log.
const LOG_FLOOR: f64 = 1e-12;

/// Elementwise sigmoid focal loss
/// `-α_t (1 - p_t)^γ ln p_t` for binary `targets`.
pub fn focal_elements(scores: &Tensor, targets: &[f64], gamma: f64, alpha: f64) -> Result<Tensor> {
    if targets.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} focal targets for {} scores",
            targets.len(),
            scores.len()
        )));
    }
    let shape = scores.shape().to_vec();
    let sign = Tensor::new(targets.iter().map(|t| 2.0 * t - 1.0).collect(), &shape)?;
    let offset = Tensor::new(targets.iter().map(|t| 1.0 - t).collect(), &shape)?;
    let weight = Tensor::new(
        targets.iter().map(|t| alpha * t + (1.0 - alpha) * (1.0 - t)).collect(),
        &shape,
    )?;
    let pt = scores.mul(&sign)?.add(&offset)?;
    let modulator = pt.affine(-1.0, 1.0).powf(gamma)?;
    let nll = pt.clamp(LOG_FLOOR, 1.0)?.ln()?.neg();
    weight.mul(&modulator)?.mul(&nll)
}

/// Focal loss summed over every (cell, class) element.
pub fn focal_cls_loss(scores: &Tensor, targets: &[f64], gamma: f64, alpha: f64) -> Result<Tensor> {
    Ok(focal_elements(scores, targets, gamma, alpha)?.sum_all())
}

/// `1 - GIoU` per paired box.
pub fn reg_loss(pred: &BoxTensors, gt: &BoxTensors) -> Result<Tensor> {
    Ok(giou_tensor(pred, gt)?.affine(-1.0, 1.0))
}
