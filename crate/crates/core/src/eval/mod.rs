//! Detection metrics and score/IoU harmony diagnostics.

pub mod ap;
pub mod harmony;
pub mod inference;
pub mod io;
pub mod matching;

use serde::{Deserialize, Serialize};

pub use ap::{average_precision, iou_thresholds, map_coco, map_coco_with, ApResult, ClassAp};
pub use harmony::{compare_reports, harmony_report, HarmonyReport, JointSample, ReportDelta};
pub use inference::{detect, InferenceSettings};
pub use io::{align, eval_set_id, ingest_ground_truth, ingest_predictions, ImageAnnotations, ImageDetections};
pub use matching::{match_detections, DetectionMatch, MatchResult};

use crate::detector::boxes::{Detection, GroundTruth};
use crate::error::Result;
use crate::parallel::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ap: ApResult,
    pub harmony: HarmonyReport,
}

pub fn evaluate_detections(
    exec: Exec,
    dets: &[Vec<Detection>],
    gts: &[Vec<GroundTruth>],
    eval_set_id: &str,
) -> Result<Evaluation> {
    Ok(Evaluation {
        ap: map_coco_with(exec, dets, gts)?,
        harmony: harmony_report(dets, gts, eval_set_id)?,
    })
}
