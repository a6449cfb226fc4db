//! Turning head outputs into ranked detections, and scoring them.

mod decode;
mod map;
mod nms;

use serde::Serialize;

pub use decode::{
    decode, filter_threshold, ranking_order, top_k, CenternessMode, DecodeParams, Detection,
};
pub use map::{
    average_precision, mean_average_precision, render_table, ClassAp, EvalReport, VideoResult,
    DEFAULT_THRESHOLDS, INTERPOLATION,
};
pub use nms::{nms, temporal_iou};

/// One row of the detections output file.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct DetectionRecord {
    pub video_id: String,
    pub start_frame: f64,
    pub end_frame: f64,
    pub start_sec: f64,
    pub end_sec: f64,
    pub label: usize,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(video_id: &str, det: &Detection, fps: f64) -> Self {
        DetectionRecord {
            video_id: video_id.to_string(),
            start_frame: det.start,
            end_frame: det.end,
            start_sec: det.start / fps,
            end_sec: det.end / fps,
            label: det.label,
            score: det.score,
        }
    }
}

/// Post-processing applied to pooled per-video detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostProcess {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub top_k: usize,
}

/// threshold → per-class NMS → top-k.
pub fn postprocess(dets: Vec<Detection>, p: &PostProcess) -> Vec<Detection> {
    top_k(nms(filter_threshold(dets, p.score_threshold), p.nms_iou), p.top_k)
}
