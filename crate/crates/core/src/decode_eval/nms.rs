use super::decode::{ranking_order, Detection};

/// 1D Jaccard overlap of two `(start, end)` intervals.
pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy per-class non-maximum suppression.
///
/// Detections are visited in [`ranking_order`]; one is kept unless its IoU
/// with an already-kept detection of the same class exceeds `delta`. The
/// result is in ranking order.
pub fn nms(mut dets: Vec<Detection>, delta: f64) -> Vec<Detection> {
    dets.sort_by(ranking_order);
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.label == d.label && temporal_iou(k.interval(), d.interval()) > delta);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}
