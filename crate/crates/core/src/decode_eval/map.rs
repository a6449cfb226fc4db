//! Average precision over temporal IoU thresholds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::decode::{ranking_order, Detection};
use super::nms::temporal_iou;
use crate::targets::ActionInstance;

/// IoU thresholds reported by default: 0.3, 0.4, …, 0.7.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

/// Name recorded in reports for the interpolation scheme used.
pub const INTERPOLATION: &str = "all_point_precision_envelope";

/// Detections and ground truth for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoResult {
    pub video_id: String,
    pub ground_truth: Vec<ActionInstance>,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub label: usize,
    pub n_ground_truth: usize,
    pub n_detections: usize,
    /// AP per threshold, aligned with [`EvalReport::thresholds`].
    pub ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    /// mAP per threshold: unweighted mean over classes with ground truth.
    pub map: Vec<f64>,
    pub per_class: Vec<ClassAp>,
    pub n_videos: usize,
    pub n_detections: usize,
    pub n_ground_truth: usize,
    /// Set when no class has any ground truth; `map` is then all zeros.
    pub no_ground_truth: bool,
    pub interpolation: String,
}

impl EvalReport {
    /// mAP at the threshold closest to `t`.
    pub fn map_at(&self, t: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&x| (x - t).abs() < 1e-9)
            .map(|i| self.map[i])
    }

    /// Aligned text table; one row, values in percent.
    pub fn table(&self, row_name: &str) -> String {
        render_table(&self.thresholds, &[(row_name.to_string(), self.map.clone())])
    }
}

/// Aligned-column text table of mAP (percent) per IoU threshold.
pub fn render_table(thresholds: &[f64], rows: &[(String, Vec<f64>)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(8);
    let mut out = format!("{:<width$}", "Approach");
    for t in thresholds {
        out.push_str(&format!(" | {t:>5.1}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + thresholds.len() * 8));
    out.push('\n');
    for (name, values) in rows {
        out.push_str(&format!("{name:<width$}"));
        for v in values {
            out.push_str(&format!(" | {:>5.1}", 100.0 * v));
        }
        out.push('\n');
    }
    out
}

/// Area under the precision/recall curve using the monotone precision
/// envelope, summed over every recall step.
pub fn average_precision(true_positive: &[bool], n_ground_truth: usize) -> f64 {
    if n_ground_truth == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(true_positive.len());
    let mut recall = Vec::with_capacity(true_positive.len());
    let mut tp = 0usize;
    for (i, &hit) in true_positive.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / n_ground_truth as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    ap
}

/// Marks each detection (already in ranking order) as a hit or a miss.
///
/// A detection matches the unmatched ground truth of its video with the
/// highest IoU, provided that IoU is at least `threshold`.
fn match_detections(
    dets: &[(usize, Detection)],
    gt_by_video: &[Vec<(f64, f64)>],
    threshold: f64,
) -> Vec<bool> {
    let mut used: Vec<Vec<bool>> = gt_by_video.iter().map(|g| vec![false; g.len()]).collect();
    dets.iter()
        .map(|(video, d)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, &g) in gt_by_video[*video].iter().enumerate() {
                if used[*video][j] {
                    continue;
                }
                let iou = temporal_iou(d.interval(), g);
                if iou >= threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    used[*video][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

pub fn mean_average_precision(videos: &[VideoResult], thresholds: &[f64]) -> EvalReport {
    let mut labels: BTreeMap<usize, ()> = BTreeMap::new();
    for v in videos {
        for g in &v.ground_truth {
            labels.insert(g.label, ());
        }
    }

    let mut per_class = Vec::with_capacity(labels.len());
    for &label in labels.keys() {
        let gt: Vec<Vec<(f64, f64)>> = videos
            .iter()
            .map(|v| {
                v.ground_truth
                    .iter()
                    .filter(|g| g.label == label)
                    .map(|g| (g.start, g.end))
                    .collect()
            })
            .collect();
        let n_gt: usize = gt.iter().map(Vec::len).sum();
        let mut dets: Vec<(usize, Detection)> = videos
            .iter()
            .enumerate()
            .flat_map(|(i, v)| {
                v.detections
                    .iter()
                    .filter(|d| d.label == label)
                    .map(move |d| (i, *d))
            })
            .collect();
        dets.sort_by(|a, b| ranking_order(&a.1, &b.1).then(a.0.cmp(&b.0)));
        let ap = thresholds
            .iter()
            .map(|&t| average_precision(&match_detections(&dets, &gt, t), n_gt))
            .collect();
        per_class.push(ClassAp {
            label,
            n_ground_truth: n_gt,
            n_detections: dets.len(),
            ap,
        });
    }

    let map = (0..thresholds.len())
        .map(|i| {
            if per_class.is_empty() {
                0.0
            } else {
                per_class.iter().map(|c| c.ap[i]).sum::<f64>() / per_class.len() as f64
            }
        })
        .collect();

    EvalReport {
        thresholds: thresholds.to_vec(),
        map,
        n_videos: videos.len(),
        n_detections: videos.iter().map(|v| v.detections.len()).sum(),
        n_ground_truth: videos.iter().map(|v| v.ground_truth.len()).sum(),
        no_ground_truth: per_class.is_empty(),
        per_class,
        interpolation: INTERPOLATION.to_string(),
    }
}
