//! Detection evaluation: IoU matching, precision, recall, AP and mAP.

pub mod ap;
pub mod boxes;
pub mod classes;
pub mod eval;
pub mod matching;
pub mod report;

pub use ap::{average_precision, pr_curve, precision, recall, ApMethod};
pub use boxes::{iou, BBox, DetBox, GtBox};
pub use classes::{canonical_name, ClassTable};
pub use eval::{evaluate, ClassReport, EvalOptions, EvalReport, PrPoint, DEFAULT_IOU_THR};
pub use matching::{match_detections, MatchResult};
pub use report::PrTable;
