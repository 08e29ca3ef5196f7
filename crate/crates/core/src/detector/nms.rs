use super::boxes::{iou, Detection};

/// Greedy per-class non-maximum suppression.
///
/// Detections with `score <= score_threshold` are dropped first. Survivors
/// are ranked by score, ties going to the lower input index (candidates are
/// produced in cell order, so this is the lower cell index). A detection is
/// suppressed when a higher-ranked kept detection of the same class overlaps
/// it with IoU above `iou_threshold`. At most `max_detections` are returned,
/// in rank order.
pub fn nms(
    detections: &[Detection],
    iou_threshold: f64,
    score_threshold: f64,
    max_detections: usize,
) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len())
        .filter(|&i| detections[i].score > score_threshold)
        .collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .total_cmp(&detections[a].score)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.len() >= max_detections {
            break;
        }
        let d = &detections[i];
        let suppressed = kept.iter().any(|&k| {
            let other = &detections[k];
            other.class_id == d.class_id && iou(&other.bbox, &d.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| detections[i]).collect()
}
