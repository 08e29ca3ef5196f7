//! Helpers shared by the integration tests. The `oracle_*` functions favour
//! obviousness over speed and do not call the code under test.

#![allow(dead_code)]

pub mod grad_suite;

use hqlab::detector::boxes::{BBox, Detection};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let area = |r: &BBox| (r.x2 - r.x1) * (r.y2 - r.y1);
    (inter / (area(a) + area(b) - inter)).clamp(0.0, 1.0)
}

/// Quadratic NMS: precompute every pairwise IoU and each detection's rank,
/// then keep a detection iff no kept detection of better rank and the same
/// class overlaps it by more than `iou_threshold`.
pub fn oracle_nms(dets: &[Detection], iou_threshold: f64, score_threshold: f64, max_detections: usize) -> Vec<Detection> {
    let n = dets.len();
    let ious: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| oracle_iou(&dets[i].bbox, &dets[j].bbox)).collect()).collect();
    let better = |j: usize, i: usize| dets[j].score > dets[i].score || (dets[j].score == dets[i].score && j < i);
    let alive: Vec<usize> = (0..n).filter(|&i| dets[i].score > score_threshold).collect();
    let mut by_rank: Vec<(usize, usize)> = alive
        .iter()
        .map(|&i| (alive.iter().filter(|&&j| better(j, i)).count(), i))
        .collect();
    by_rank.sort();
    let mut kept: Vec<usize> = Vec::new();
    for (_, i) in by_rank {
        if kept.len() == max_detections {
            break;
        }
        if !kept.iter().any(|&k| dets[k].class_id == dets[i].class_id && ious[k][i] > iou_threshold) {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}

/// 101-point AP straight off the precision/recall curve: at each recall
/// level, the best precision among ranks whose recall reaches it.
pub fn oracle_ap(outcomes: &[(f64, bool)], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..outcomes.len()).collect();
    idx.sort_by(|&a, &b| outcomes[b].0.partial_cmp(&outcomes[a].0).unwrap().then(a.cmp(&b)));
    let mut curve = Vec::new();
    let mut tp = 0;
    for (rank, &i) in idx.iter().enumerate() {
        if outcomes[i].1 {
            tp += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut sum = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        let best = curve.iter().filter(|(rec, _)| *rec >= r).map(|(_, p)| *p).fold(0.0, f64::max);
        sum += best;
    }
    Some(sum / 101.0)
}

/// Boxes on a coarse integer lattice, so exact IoU ties with the threshold
/// happen, and scores from a small set, so score ties happen.
pub fn random_detections(r: &mut ChaCha8Rng, max_len: usize) -> Vec<Detection> {
    let n = r.random_range(0..=max_len);
    (0..n)
        .map(|_| {
            let x1 = r.random_range(0..12) as f64;
            let y1 = r.random_range(0..12) as f64;
            let w = r.random_range(1..8) as f64;
            let h = r.random_range(1..8) as f64;
            Detection {
                bbox: BBox::new(x1, y1, x1 + w, y1 + h).unwrap(),
                class_id: r.random_range(0..3),
                score: r.random_range(0..10) as f64 / 10.0,
            }
        })
        .collect()
}

/// Up to 10 outcomes over up to 5 ground truths, with at most `num_gt`
/// true positives.
pub fn random_outcomes(r: &mut ChaCha8Rng) -> (Vec<(f64, bool)>, usize) {
    let num_gt = r.random_range(0..=5);
    let n = r.random_range(0..=10);
    let mut tps = 0;
    let outcomes = (0..n)
        .map(|_| {
            let hit = tps < num_gt && r.random_bool(0.5);
            tps += hit as usize;
            (r.random_range(0..6) as f64 / 5.0, hit)
        })
        .collect();
    (outcomes, num_gt)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
