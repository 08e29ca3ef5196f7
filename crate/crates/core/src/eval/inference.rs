use serde::{Deserialize, Serialize};

use crate::detector::boxes::Detection;
use crate::detector::net::{candidates, DetectorNet, IMAGE_SIZE};
use crate::detector::nms::nms;
use crate::error::{Error, Result};
use crate::parallel::{map_indexed, Exec};
use crate::tensor::Tensor;

/// Post-processing thresholds, recorded with every evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceSettings {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    /// Images per forward pass.
    pub batch_size: usize,
}

impl Default for InferenceSettings {
    fn default() -> Self {
        InferenceSettings {
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
            batch_size: 32,
        }
    }
}

/// Runs the detector over `count` images stored back to back in `pixels`
/// and returns the post-NMS detections of each image.
pub fn detect(
    exec: Exec,
    net: &DetectorNet,
    pixels: &[f64],
    count: usize,
    settings: &InferenceSettings,
) -> Result<Vec<Vec<Detection>>> {
    let per_image = IMAGE_SIZE * IMAGE_SIZE;
    if pixels.len() != count * per_image {
        return Err(Error::Shape(format!("{} pixels for {count} images", pixels.len())));
    }
    let bs = settings.batch_size.max(1);
    let chunks = count.div_ceil(bs);
    let grid = net.grid();
    let results = map_indexed(exec, chunks, |c| -> Result<Vec<Vec<Detection>>> {
        let lo = c * bs;
        let n = bs.min(count - lo);
        let images = Tensor::new(
            pixels[lo * per_image..(lo + n) * per_image].to_vec(),
            &[n, 1, IMAGE_SIZE, IMAGE_SIZE],
        )?;
        let out = net.predict(&images)?;
        Ok((0..n)
            .map(|i| {
                let cands = candidates(&out, i, &grid, settings.score_threshold);
                nms(&cands, settings.nms_iou, settings.score_threshold, settings.max_detections)
            })
            .collect())
    });
    let mut all = Vec::with_capacity(count);
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}
