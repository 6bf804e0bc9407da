//! Single-class detection evaluation: greedy matching, precision/recall/F1
//! and all-point average precision.

use serde::{Deserialize, Serialize};

use super::bbox::{iou, BoundingBox};

pub const DEFAULT_IOU_THRESHOLDS: [f64; 3] = [0.5, 0.75, 0.90];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    /// Position in the caller's prediction list.
    pub index: usize,
    pub confidence: f64,
    pub true_positive: bool,
    /// Matched ground-truth index, if any.
    pub matched: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Predictions in descending-confidence order.
    pub labels: Vec<LabeledPrediction>,
    pub false_negatives: usize,
    pub ground_truth: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.labels.iter().filter(|l| l.true_positive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.labels.len() - self.true_positives()
    }

    /// Pools per-image results into one confidence-ranked list. The sort is
    /// stable, so equal confidences keep image order.
    pub fn merge(results: &[MatchResult]) -> MatchResult {
        let mut labels: Vec<LabeledPrediction> =
            results.iter().flat_map(|r| r.labels.iter().copied()).collect();
        labels.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        MatchResult {
            labels,
            false_negatives: results.iter().map(|r| r.false_negatives).sum(),
            ground_truth: results.iter().map(|r| r.ground_truth).sum(),
        }
    }
}

/// Processes predictions by descending confidence (ties keep input order);
/// each claims the unmatched ground truth with the highest IoU (ties: lowest
/// index) when that IoU reaches `iou_threshold`.
pub fn match_detections(
    predictions: &[BoundingBox],
    ground_truth: &[BoundingBox],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].confidence.total_cmp(&predictions[a].confidence));
    let mut taken = vec![false; ground_truth.len()];
    let mut labels = Vec::with_capacity(predictions.len());
    for i in order {
        let p = &predictions[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(p, gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
        }
        labels.push(LabeledPrediction {
            index: i,
            confidence: p.confidence,
            true_positive: best.is_some(),
            matched: best.map(|(g, _)| g),
        });
    }
    MatchResult {
        labels,
        false_negatives: taken.iter().filter(|t| !**t).count(),
        ground_truth: ground_truth.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub iou_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Area under the un-interpolated precision-recall staircase:
/// `Σ (R_i − R_{i−1}) · P_i` over the confidence ranking.
pub fn average_precision(result: &MatchResult) -> f64 {
    if result.ground_truth == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank, l) in result.labels.iter().enumerate() {
        if l.true_positive {
            tp += 1;
            ap += ratio(tp, rank + 1) / result.ground_truth as f64;
        }
    }
    ap
}

pub fn detection_metrics(result: &MatchResult, iou_threshold: f64) -> DetectionMetrics {
    let tp = result.true_positives();
    let fp = result.false_positives();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + result.false_negatives);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    DetectionMetrics {
        iou_threshold,
        precision,
        recall,
        f1,
        ap: average_precision(result),
        true_positives: tp,
        false_positives: fp,
        false_negatives: result.false_negatives,
    }
}

/// Predictions and ground truth for one source image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub predictions: Vec<BoundingBox>,
    pub ground_truth: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvalReport {
    pub min_confidence: f64,
    pub thresholds: Vec<f64>,
    pub records: Vec<DetectionMetrics>,
}

/// Evaluates every image at each IoU threshold, ignoring predictions below
/// `min_confidence`.
pub fn evaluate_detections(
    images: &[ImageDetections],
    thresholds: &[f64],
    min_confidence: f64,
) -> DetectionEvalReport {
    let records = thresholds
        .iter()
        .map(|&t| {
            let per_image: Vec<MatchResult> = images
                .iter()
                .map(|img| {
                    let kept: Vec<BoundingBox> = img
                        .predictions
                        .iter()
                        .filter(|p| p.confidence >= min_confidence)
                        .copied()
                        .collect();
                    match_detections(&kept, &img.ground_truth, t)
                })
                .collect();
            detection_metrics(&MatchResult::merge(&per_image), t)
        })
        .collect();
    DetectionEvalReport {
        min_confidence,
        thresholds: thresholds.to_vec(),
        records,
    }
}
