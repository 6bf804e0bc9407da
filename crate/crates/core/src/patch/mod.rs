//! Soil-patch cropping from annotated images and detection metrics.

pub mod bbox;
pub mod crop;
pub mod detection;

pub use bbox::{iou, BoundingBox};
pub use crop::{crop_patch, read_image, write_png, write_ppm, Crop, DEFAULT_MIN_CONFIDENCE};
pub use detection::{
    average_precision, detection_metrics, evaluate_detections, match_detections,
    DetectionEvalReport, DetectionMetrics, ImageDetections, LabeledPrediction, MatchResult,
    DEFAULT_IOU_THRESHOLDS,
};
