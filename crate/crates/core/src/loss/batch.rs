use super::detection::{focal_cls_loss, reg_loss};
use super::total::{hqod_total, LossBreakdown, LossComponents, LossConfig, PositiveTerms};
use crate::detector::assign::{assign_targets, Grid};
use crate::detector::boxes::{iou_tensor, BBox, BoxTensors, GroundTruth};
use crate::detector::net::HeadOutput;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Assigns targets for every image of a batch and builds the summed loss
/// components from the head outputs.
pub fn batch_components(
    out: &HeadOutput,
    gts: &[Vec<GroundTruth>],
    grid: &Grid,
    cfg: &LossConfig,
) -> Result<LossComponents> {
    let s = out.scores.shape();
    let (batch, classes, cells) = (s[0], s[1], grid.cells());
    if gts.len() != batch || s[2] * s[3] != cells || out.distances.shape()[0] != batch {
        return Err(Error::Shape(format!(
            "batch of {} targets for head output {:?} on a {}x{} grid",
            gts.len(),
            s,
            grid.size,
            grid.size
        )));
    }
    let mut targets = vec![0.0; out.scores.len()];
    let mut score_idx = Vec::new();
    let mut dist_idx: [Vec<usize>; 4] = Default::default();
    let (mut cx, mut cy) = (Vec::new(), Vec::new());
    let mut gt_boxes: Vec<BBox> = Vec::new();
    let mut negatives = 0;
    for (n, image_gts) in gts.iter().enumerate() {
        let a = assign_targets(grid, image_gts);
        negatives += a.negatives.len();
        for pos in a.positives {
            let gt = &image_gts[pos.gt];
            if gt.class_id >= classes {
                return Err(Error::Validation(format!("class id {} out of range", gt.class_id)));
            }
            let i = (n * classes + gt.class_id) * cells + pos.cell;
            targets[i] = 1.0;
            score_idx.push(i);
            for (k, idx) in dist_idx.iter_mut().enumerate() {
                idx.push((n * 4 + k) * cells + pos.cell);
            }
            let (x, y) = grid.center(pos.cell);
            cx.push(x);
            cy.push(y);
            gt_boxes.push(gt.bbox);
        }
    }
    let cls_sum = focal_cls_loss(&out.scores, &targets, cfg.focal_gamma, cfg.focal_alpha)?;
    if score_idx.is_empty() {
        return LossComponents::from_terms(cls_sum, None, negatives, cfg);
    }
    let p = out.scores.gather(&score_idx)?;
    let [l, t, r, b] = dist_idx.map(|idx| out.distances.gather(&idx));
    let pred = BoxTensors::decode(&Tensor::vector(cx)?, &Tensor::vector(cy)?, &l?, &t?, &r?, &b?)?;
    let target = BoxTensors::constant(&gt_boxes)?;
    let terms = PositiveTerms {
        u: iou_tensor(&pred, &target)?,
        reg: reg_loss(&pred, &target)?,
        p,
    };
    LossComponents::from_terms(cls_sum, Some(&terms), negatives, cfg)
}

/// The training objective of one batch and its scalar breakdown.
pub fn batch_objective(
    out: &HeadOutput,
    gts: &[Vec<GroundTruth>],
    grid: &Grid,
    cfg: &LossConfig,
) -> Result<(Tensor, LossBreakdown)> {
    hqod_total(&batch_components(out, gts, grid, cfg)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossMode;

    fn grid() -> Grid {
        Grid { size: 2, stride: 8 }
    }

    fn head(score: f64, dist: f64) -> HeadOutput {
        HeadOutput {
            scores: Tensor::param(vec![score; 2 * 4], &[1, 2, 2, 2]).unwrap(),
            distances: Tensor::param(vec![dist; 4 * 4], &[1, 4, 2, 2]).unwrap(),
        }
    }

    fn gt(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize) -> GroundTruth {
        GroundTruth {
            bbox: BBox::new(x1, y1, x2, y2).unwrap(),
            class_id,
        }
    }

    #[test]
    fn perfect_box_has_zero_regression_and_hiou() {
        // Cell 0 is centered at (4, 4); distance 2 decodes to (2, 2, 6, 6).
        let out = head(0.5, 2.0);
        let gts = vec![vec![gt(2.0, 2.0, 6.0, 6.0, 1)]];
        let cfg = LossConfig::with_mode(LossMode::Hqod);
        let (_, b) = batch_objective(&out, &gts, &grid(), &cfg).unwrap();
        assert_eq!((b.positives, b.negatives), (1, 3));
        assert!(b.reg.abs() < 1e-15);
        assert!(b.hiou.abs() < 1e-15);
        // p = 0.5, u = 1: c = 0.5, α = 1.5.
        let want = 1.5 * ((-0.5f64).exp() - (-1f64).exp());
        assert!((b.tcorr - want).abs() < 1e-12);
    }

    #[test]
    fn mode_decomposition_identity() {
        let gts = vec![vec![gt(1.0, 1.0, 7.0, 7.0, 0), gt(8.5, 8.5, 15.0, 14.0, 1)]];
        let mk = |mode| {
            let out = head(0.3, 2.5);
            batch_objective(&out, &gts, &grid(), &LossConfig::with_mode(mode)).unwrap().1
        };
        let base = mk(LossMode::Baseline);
        let hq = mk(LossMode::Hqod);
        assert_eq!(base.positives, 2);
        assert!((base.total + base.tcorr + 1.5 * base.hiou - hq.total).abs() < 1e-12);
    }

    #[test]
    fn gradients_reach_both_heads() {
        let out = head(0.4, 3.0);
        let gts = vec![vec![gt(1.0, 1.0, 7.0, 7.0, 0)]];
        let (loss, _) = batch_objective(&out, &gts, &grid(), &LossConfig::with_mode(LossMode::Hqod)).unwrap();
        loss.backward().unwrap();
        assert!(out.scores.grad().unwrap().iter().any(|g| *g != 0.0));
        assert!(out.distances.grad().unwrap().iter().any(|g| *g != 0.0));
    }

    #[test]
    fn empty_image_uses_unit_divisor() {
        let out = head(0.2, 1.0);
        let (_, b) = batch_objective(&out, &[vec![]], &grid(), &LossConfig::with_mode(LossMode::Hqod)).unwrap();
        assert_eq!(b.positives, 0);
        let per = 0.75 * 0.2f64.powi(2) * -(0.8f64).ln();
        assert!((b.total - 8.0 * per).abs() < 1e-12);
    }

    #[test]
    fn mismatched_batch_rejected() {
        let out = head(0.2, 1.0);
        assert!(batch_objective(&out, &[vec![], vec![]], &grid(), &LossConfig::default()).is_err());
    }
}
