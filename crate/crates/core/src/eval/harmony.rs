use serde::{Deserialize, Serialize};

use super::ap::check_aligned;
use super::matching::match_detections;
use crate::detector::boxes::{Detection, GroundTruth};
use crate::error::{Error, Result};

pub const GAP_BINS: usize = 10;
pub const IOU_INTERVALS: usize = 5;
/// A detection counts as a true positive for the harmony statistics when it
/// matches at this IoU.
pub const TP_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointSample {
    /// Classification score.
    pub p: f64,
    /// IoU with the matched ground truth.
    pub u: f64,
}

/// Score/IoU agreement statistics over the true positives of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonyReport {
    pub eval_set_id: String,
    pub tp_iou_threshold: f64,
    pub tp_count: usize,
    /// True when there are no true positives; proportions are then `None`.
    pub empty: bool,
    /// Counts of `|p - u|` in `[0, 0.1), ..., [0.9, 1.0]`.
    pub gap_counts: [usize; GAP_BINS],
    pub gap_proportions: Option<[f64; GAP_BINS]>,
    /// Counts of `u` in `[0.5, 0.6), ..., [0.9, 1.0]`.
    pub iou_interval_counts: [usize; IOU_INTERVALS],
    pub iou_interval_proportions: Option<[f64; IOU_INTERVALS]>,
    pub mean_gap: Option<f64>,
    /// Sorted by `p`, then `u`.
    pub joint_samples: Vec<JointSample>,
}

/// Bin of a gap in `[0, 1]`; the last bin is closed.
pub fn gap_bin(gap: f64) -> usize {
    ((gap * GAP_BINS as f64).floor().max(0.0) as usize).min(GAP_BINS - 1)
}

/// Interval of a TP IoU in `[0.5, 1]`; the last interval is closed.
pub fn iou_interval(u: f64) -> usize {
    ((u * 10.0).floor() as i64 - 5).clamp(0, IOU_INTERVALS as i64 - 1) as usize
}

fn proportions<const N: usize>(counts: &[usize; N], total: usize) -> Option<[f64; N]> {
    (total > 0).then(|| counts.map(|c| c as f64 / total as f64))
}

impl HarmonyReport {
    pub fn from_samples(eval_set_id: &str, mut samples: Vec<JointSample>) -> Result<Self> {
        if let Some(s) = samples
            .iter()
            .find(|s| !(0.0..=1.0).contains(&s.p) || !(0.0..=1.0).contains(&s.u))
        {
            return Err(Error::Validation(format!("harmony sample outside [0, 1]: {s:?}")));
        }
        samples.sort_by(|a, b| a.p.total_cmp(&b.p).then(a.u.total_cmp(&b.u)));
        let mut gap_counts = [0; GAP_BINS];
        let mut iou_interval_counts = [0; IOU_INTERVALS];
        let mut gap_sum = 0.0;
        for s in &samples {
            let gap = (s.p - s.u).abs();
            gap_sum += gap;
            gap_counts[gap_bin(gap)] += 1;
            iou_interval_counts[iou_interval(s.u)] += 1;
        }
        let n = samples.len();
        Ok(HarmonyReport {
            eval_set_id: eval_set_id.to_string(),
            tp_iou_threshold: TP_IOU_THRESHOLD,
            tp_count: n,
            empty: n == 0,
            gap_proportions: proportions(&gap_counts, n),
            iou_interval_proportions: proportions(&iou_interval_counts, n),
            gap_counts,
            iou_interval_counts,
            mean_gap: (n > 0).then(|| gap_sum / n as f64),
            joint_samples: samples,
        })
    }
}

/// Matches each image at IoU 0.5 and collects `(score, match IoU)` for every
/// true positive.
pub fn harmony_report(dets: &[Vec<Detection>], gts: &[Vec<GroundTruth>], eval_set_id: &str) -> Result<HarmonyReport> {
    check_aligned(dets, gts)?;
    let samples = dets
        .iter()
        .zip(gts)
        .flat_map(|(d, g)| match_detections(d, g, TP_IOU_THRESHOLD).matches)
        .filter(|m| m.is_tp())
        .map(|m| JointSample { p: m.score, u: m.iou })
        .collect();
    HarmonyReport::from_samples(eval_set_id, samples)
}

/// `b - a` for two reports over the same evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDelta {
    pub eval_set_id: String,
    pub tp_count: i64,
    pub iou_interval_counts: [i64; IOU_INTERVALS],
    /// `None` when either report is empty.
    pub gap_proportions: Option<[f64; GAP_BINS]>,
    pub iou_interval_proportions: Option<[f64; IOU_INTERVALS]>,
    pub mean_gap: Option<f64>,
}

fn diff<const N: usize>(a: Option<[f64; N]>, b: Option<[f64; N]>) -> Option<[f64; N]> {
    let (a, b) = (a?, b?);
    Some(std::array::from_fn(|i| b[i] - a[i]))
}

pub fn compare_reports(a: &HarmonyReport, b: &HarmonyReport) -> Result<ReportDelta> {
    if a.eval_set_id != b.eval_set_id {
        return Err(Error::Validation(format!(
            "reports come from different evaluation sets ('{}' vs '{}')",
            a.eval_set_id, b.eval_set_id
        )));
    }
    Ok(ReportDelta {
        eval_set_id: a.eval_set_id.clone(),
        tp_count: b.tp_count as i64 - a.tp_count as i64,
        iou_interval_counts: std::array::from_fn(|i| b.iou_interval_counts[i] as i64 - a.iou_interval_counts[i] as i64),
        gap_proportions: diff(a.gap_proportions, b.gap_proportions),
        iou_interval_proportions: diff(a.iou_interval_proportions, b.iou_interval_proportions),
        mean_gap: a.mean_gap.zip(b.mean_gap).map(|(x, y)| y - x),
    })
}
