//! The toy detector: box utilities, target assignment, the network, NMS and
//! weight serialization.

pub mod assign;
pub mod boxes;
pub mod net;
pub mod nms;
pub mod weights;

pub use assign::{assign_targets, Assignment, Grid, Positive};
pub use boxes::{decode, encode, iou, iou_matrix, BBox, BoxTensors, Detection, GroundTruth};
pub use net::{candidates, DetectorNet, HeadOutput};
pub use nms::nms;
