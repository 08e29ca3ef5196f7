//! JSON prediction / ground-truth files and report export.
//!
//! Both files are a list of `{"image_id": ..., "detections": [...]}`
//! records; each detection is `{"box": [x1, y1, x2, y2], "class_id": k,
//! "score": s}`, with no `score` in ground-truth files.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ap::ApResult;
use super::harmony::{HarmonyReport, GAP_BINS, IOU_INTERVALS};
use crate::detector::boxes::{BBox, Detection, GroundTruth};
use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotations {
    pub image_id: String,
    pub objects: Vec<GroundTruth>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredEntry {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_id: i64,
    score: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtEntry {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class_id: i64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record<T> {
    image_id: String,
    detections: Vec<T>,
}

fn parse_records<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<Record<T>>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    serde_json::from_str(text).map_err(|e| Error::Format(format!("line {}, column {}: {e}", e.line(), e.column())))
}

fn entry_box(image_id: &str, k: usize, bbox: [f64; 4], class_id: i64) -> Result<(BBox, usize)> {
    let at = || format!("image '{image_id}', detection {k}");
    let b = BBox::from_array(bbox).map_err(|e| Error::Validation(format!("{}: {e}", at())))?;
    let c = usize::try_from(class_id)
        .map_err(|_| Error::Validation(format!("{}: negative class id {class_id}", at())))?;
    Ok((b, c))
}

fn check_unique<'a>(ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, id) in ids.enumerate() {
        if let Some(prev) = seen.insert(id, i) {
            return Err(Error::Validation(format!("image '{id}' appears in records {prev} and {i}")));
        }
    }
    Ok(())
}

pub fn parse_predictions(text: &str) -> Result<Vec<ImageDetections>> {
    let records: Vec<Record<PredEntry>> = parse_records(text)?;
    check_unique(records.iter().map(|r| r.image_id.as_str()))?;
    records
        .into_iter()
        .map(|r| {
            let detections = r
                .detections
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let (bbox, class_id) = entry_box(&r.image_id, k, e.bbox, e.class_id)?;
                    if !(0.0..=1.0).contains(&e.score) {
                        return Err(Error::Validation(format!(
                            "image '{}', detection {k}: score {} outside [0, 1]",
                            r.image_id, e.score
                        )));
                    }
                    Ok(Detection {
                        bbox,
                        class_id,
                        score: e.score,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(ImageDetections {
                image_id: r.image_id,
                detections,
            })
        })
        .collect()
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<ImageAnnotations>> {
    let records: Vec<Record<GtEntry>> = parse_records(text)?;
    check_unique(records.iter().map(|r| r.image_id.as_str()))?;
    records
        .into_iter()
        .map(|r| {
            let objects = r
                .detections
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    let (bbox, class_id) = entry_box(&r.image_id, k, e.bbox, e.class_id)?;
                    Ok(GroundTruth { bbox, class_id })
                })
                .collect::<Result<_>>()?;
            Ok(ImageAnnotations {
                image_id: r.image_id,
                objects,
            })
        })
        .collect()
}

pub fn ingest_predictions(path: &Path) -> Result<Vec<ImageDetections>> {
    parse_predictions(&fsutil::read_to_string(path)?).map_err(|e| annotate(path, e))
}

pub fn ingest_ground_truth(path: &Path) -> Result<Vec<ImageAnnotations>> {
    parse_ground_truth(&fsutil::read_to_string(path)?).map_err(|e| annotate(path, e))
}

fn annotate(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}

pub fn predictions_to_json(images: &[ImageDetections]) -> Result<String> {
    let records: Vec<Record<PredEntry>> = images
        .iter()
        .map(|img| Record {
            image_id: img.image_id.clone(),
            detections: img
                .detections
                .iter()
                .map(|d| PredEntry {
                    bbox: d.bbox.to_array(),
                    class_id: d.class_id as i64,
                    score: d.score,
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

pub fn ground_truth_to_json(images: &[ImageAnnotations]) -> Result<String> {
    let records: Vec<Record<GtEntry>> = images
        .iter()
        .map(|img| Record {
            image_id: img.image_id.clone(),
            detections: img
                .objects
                .iter()
                .map(|g| GtEntry {
                    bbox: g.bbox.to_array(),
                    class_id: g.class_id as i64,
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

/// Short content hash identifying an evaluation set.
pub fn eval_set_id(images: &[ImageAnnotations]) -> Result<String> {
    let json = ground_truth_to_json(images)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// Orders predictions to match the ground-truth images. Images without a
/// prediction record get no detections; predictions for unknown images are
/// rejected.
pub fn align(preds: &[ImageDetections], gts: &[ImageAnnotations]) -> Result<(Vec<Vec<Detection>>, Vec<Vec<GroundTruth>>)> {
    let index: HashMap<&str, usize> = gts.iter().enumerate().map(|(i, g)| (g.image_id.as_str(), i)).collect();
    let mut dets = vec![Vec::new(); gts.len()];
    for p in preds {
        let i = index
            .get(p.image_id.as_str())
            .ok_or_else(|| Error::Validation(format!("predictions for unknown image '{}'", p.image_id)))?;
        dets[*i] = p.detections.clone();
    }
    Ok((dets, gts.iter().map(|g| g.objects.clone()).collect()))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fsutil::write_atomic(path, s.as_bytes())
}

/// One row per gap bin and per IoU interval.
pub fn report_csv(report: &HarmonyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["section", "index", "lower", "upper", "count", "proportion"])?;
    let fmt_prop = |p: Option<f64>| p.map(|v| v.to_string()).unwrap_or_default();
    for i in 0..GAP_BINS {
        w.write_record([
            "gap".to_string(),
            i.to_string(),
            (i as f64 / 10.0).to_string(),
            ((i + 1) as f64 / 10.0).to_string(),
            report.gap_counts[i].to_string(),
            fmt_prop(report.gap_proportions.map(|p| p[i])),
        ])?;
    }
    for i in 0..IOU_INTERVALS {
        w.write_record([
            "iou".to_string(),
            i.to_string(),
            ((i + 5) as f64 / 10.0).to_string(),
            ((i + 6) as f64 / 10.0).to_string(),
            report.iou_interval_counts[i].to_string(),
            fmt_prop(report.iou_interval_proportions.map(|p| p[i])),
        ])?;
    }
    csv_string(w)
}

/// Per-class AP at each threshold, then class means per threshold.
pub fn ap_csv(ap: &ApResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class_id", "num_gt", "iou_threshold", "ap"])?;
    for c in &ap.per_class {
        for (t, v) in ap.iou_thresholds.iter().zip(&c.ap) {
            w.write_record([c.class_id.to_string(), c.num_gt.to_string(), t.to_string(), v.to_string()])?;
        }
    }
    let total: usize = ap.per_class.iter().map(|c| c.num_gt).sum();
    for (i, t) in ap.iou_thresholds.iter().enumerate() {
        w.write_record(["mean".to_string(), total.to_string(), t.to_string(), ap.mean_at(i).to_string()])?;
    }
    csv_string(w)
}

pub(crate) fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
