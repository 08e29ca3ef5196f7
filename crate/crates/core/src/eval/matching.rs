use crate::detector::boxes::{iou, Detection, GroundTruth};

/// Outcome for one detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMatch {
    /// Index into the original detection list.
    pub detection: usize,
    pub score: f64,
    pub class_id: usize,
    /// Matched ground truth, `None` for a false positive.
    pub gt: Option<usize>,
    /// IoU with the matched ground truth, 0 for false positives.
    pub iou: f64,
}

impl DetectionMatch {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One entry per detection, in score-descending order.
    pub matches: Vec<DetectionMatch>,
}

/// Indices of `detections` by descending score; ties keep input order.
pub fn score_order(detections: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score).then(a.cmp(&b)));
    order
}

/// Greedy matching for one image: in descending score order, each detection
/// takes the unmatched same-class ground truth with the highest IoU at or
/// above `iou_threshold` (ties to the lower index).
pub fn match_detections(detections: &[Detection], gts: &[GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut taken = vec![false; gts.len()];
    let matches = score_order(detections)
        .into_iter()
        .map(|i| {
            let d = &detections[i];
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] || g.class_id != d.class_id {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            DetectionMatch {
                detection: i,
                score: d.score,
                class_id: d.class_id,
                gt: best.map(|(j, _)| j),
                iou: best.map_or(0.0, |(_, v)| v),
            }
        })
        .collect();
    MatchResult { matches }
}
