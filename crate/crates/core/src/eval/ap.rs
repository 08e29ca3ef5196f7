use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matching::match_detections;
use crate::detector::boxes::{Detection, GroundTruth};
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Exec};

pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

/// 101-point interpolated AP from `(score, is_tp)` outcomes of one class.
///
/// Outcomes are ranked by descending score (stable), precision is replaced by
/// its running maximum from the right, and sampled at the first rank whose
/// recall reaches each of `0, 0.01, ..., 1`. Returns `None` when
/// `num_gt == 0`.
pub fn average_precision(outcomes: &[(f64, bool)], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut sorted = outcomes.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(sorted.len());
    let mut precision = Vec::with_capacity(sorted.len());
    for (_, hit) in &sorted {
        if *hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut i = 0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        while i < recall.len() && recall[i] < r {
            i += 1;
        }
        if i == recall.len() {
            break;
        }
        sum += precision[i];
    }
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub num_gt: usize,
    /// AP at each of [`iou_thresholds`].
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub iou_thresholds: Vec<f64>,
    /// Classes with at least one ground truth, by id.
    pub per_class: Vec<ClassAp>,
    pub map: f64,
    pub ap50: f64,
    pub ap75: f64,
}

impl ApResult {
    /// Class-mean AP at threshold index `t`.
    pub fn mean_at(&self, t: usize) -> f64 {
        if self.per_class.is_empty() {
            return 0.0;
        }
        self.per_class.iter().map(|c| c.ap[t]).sum::<f64>() / self.per_class.len() as f64
    }
}

pub fn check_aligned(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>]) -> Result<()> {
    if dets.len() != gts.len() {
        return Err(Error::Validation(format!(
            "{} prediction lists for {} images",
            dets.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// COCO-style AP over all images, averaged over classes then over the ten
/// IoU thresholds.
pub fn map_coco(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>]) -> Result<ApResult> {
    map_coco_with(Exec::default(), dets, gts)
}

pub fn map_coco_with(exec: Exec, dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>]) -> Result<ApResult> {
    check_aligned(dets, gts)?;
    let thresholds = iou_thresholds();
    let mut num_gt: BTreeMap<usize, usize> = BTreeMap::new();
    for g in gts.iter().flatten() {
        *num_gt.entry(g.class_id).or_default() += 1;
    }
    // Per image, per threshold: (class, score, tp) outcomes.
    let per_image = map_indexed(exec, dets.len(), |n| {
        thresholds
            .iter()
            .map(|&t| {
                match_detections(&dets[n], &gts[n], t)
                    .matches
                    .into_iter()
                    .map(|m| (m.class_id, m.score, m.is_tp()))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    });
    let mut per_class: Vec<ClassAp> = num_gt
        .iter()
        .map(|(&class_id, &n)| ClassAp {
            class_id,
            num_gt: n,
            ap: Vec::with_capacity(thresholds.len()),
        })
        .collect();
    for t in 0..thresholds.len() {
        for c in per_class.iter_mut() {
            let outcomes: Vec<(f64, bool)> = per_image
                .iter()
                .flat_map(|img| img[t].iter())
                .filter(|o| o.0 == c.class_id)
                .map(|o| (o.1, o.2))
                .collect();
            c.ap.push(average_precision(&outcomes, c.num_gt).expect("class has ground truth"));
        }
    }
    let mut result = ApResult {
        iou_thresholds: thresholds,
        per_class,
        map: 0.0,
        ap50: 0.0,
        ap75: 0.0,
    };
    let n = result.iou_thresholds.len();
    result.map = (0..n).map(|t| result.mean_at(t)).sum::<f64>() / n as f64;
    result.ap50 = result.mean_at(0);
    result.ap75 = result.mean_at(5);
    Ok(result)
}
