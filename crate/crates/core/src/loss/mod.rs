//! Training objectives.
//!
//! The detection loss is a sigmoid focal classification loss over every
//! (cell, class) element plus `1 - GIoU` over positive cells, normalized by
//! the positive count. On top of it, the task-correlation term penalizes
//! positives whose class score `p` and IoU `u` disagree, and the
//! harmonious-IoU term reweights the IoU loss toward already-good boxes.

pub mod batch;
pub mod detection;
pub mod harmony;
pub mod total;

pub use batch::{batch_components, batch_objective};
pub use detection::{focal_cls_loss, focal_elements, reg_loss};
pub use harmony::{hiou_loss, task_correlation, tcorr_loss};
pub use total::{hqod_total, LossBreakdown, LossComponents, LossConfig, LossMode, PositiveTerms};
