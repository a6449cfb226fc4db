use rayon::prelude::*;
use serde::Serialize;

use super::config::{EvalConfig, ExperimentConfig};
use super::train::{train, TrainOutcome};
use crate::autodiff::Tensor;
use crate::data::{window_offsets, AnnotatedSequence, SyntheticDataset};
use crate::decode_eval::{
    decode, mean_average_precision, postprocess, render_table, CenternessMode, DecodeParams,
    Detection, EvalReport, VideoResult,
};
use crate::error::Result;
use crate::model::Model;
use crate::srfc::{AttentionMap, SrfcVariant};

/// Attention weights of one inference window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowAttention {
    /// First frame of the window.
    pub offset: usize,
    pub map: AttentionMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoDetections {
    /// Post-processed, in ranking order.
    pub detections: Vec<Detection>,
    /// Empty unless requested, or when the variant has a single branch.
    pub attention: Vec<WindowAttention>,
}

fn slice_frames(features: &Tensor, offset: usize, len: usize) -> Tensor {
    let channels = features.shape()[0];
    let mut out = Tensor::zeros(&[channels, len]);
    for c in 0..channels {
        out.row_mut(c)
            .copy_from_slice(&features.row(c)[offset..offset + len]);
    }
    out
}

/// Runs the model over overlapping windows of one video, pools the raw
/// detections and post-processes them together.
pub fn detect(
    model: &Model,
    features: &Tensor,
    centerness: CenternessMode,
    config: &EvalConfig,
    keep_attention: bool,
) -> Result<VideoDetections> {
    let (_, len) = features.dims2("detect")?;
    let window = config.window_len.min(len);
    let mut raw = Vec::new();
    let mut attention = Vec::new();
    for offset in window_offsets(len, window, config.window_stride)? {
        let (out, trace) = model.forward(&slice_frames(features, offset, window))?;
        raw.extend(decode(
            &out,
            &DecodeParams {
                stride: model.config.stride,
                window_offset: offset as f64,
                video_len: len as f64,
                centerness,
            },
        ));
        if keep_attention {
            if let Some(map) = trace.attention() {
                attention.push(WindowAttention {
                    offset,
                    map: map.clone(),
                });
            }
        }
    }
    Ok(VideoDetections {
        detections: postprocess(raw, &config.postprocess()),
        attention,
    })
}

/// Per-video detections paired with ground truth, in input order.
pub fn collect_results(
    model: &Model,
    centerness: CenternessMode,
    data: &[AnnotatedSequence],
    config: &EvalConfig,
) -> Result<Vec<VideoResult>> {
    data.par_iter()
        .map(|seq| {
            let d = detect(model, &seq.features, centerness, config, false)?;
            Ok(VideoResult {
                video_id: seq.video_id.clone(),
                ground_truth: seq.instances.clone(),
                detections: d.detections,
            })
        })
        .collect()
}

pub fn evaluate(
    model: &Model,
    centerness: CenternessMode,
    data: &[AnnotatedSequence],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let videos = collect_results(model, centerness, data, config)?;
    Ok(mean_average_precision(&videos, &config.thresholds))
}

/// Trains on `data.train` and evaluates the final checkpoint on `data.eval`.
pub fn train_and_evaluate(
    exp: &ExperimentConfig,
    data: &SyntheticDataset,
    on_epoch: &mut dyn FnMut(&super::EpochMetrics),
) -> Result<(TrainOutcome, EvalReport)> {
    let outcome = train(&exp.model, &exp.train, &data.train, None, on_epoch)?;
    let model = outcome.checkpoint.model()?;
    let report = evaluate(&model, exp.train.centerness, &data.eval, &exp.eval)?;
    Ok((outcome, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub variant: SrfcVariant,
    pub centerness: CenternessMode,
    pub checkpoint_hash: String,
    pub report: EvalReport,
}

/// Branch-combination and center-ness comparisons under one training budget.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub thresholds: Vec<f64>,
    /// One run per requested variant, with the configured center-ness mode.
    pub variants: Vec<AblationRun>,
    /// One run per requested center-ness mode, with the configured variant.
    pub centerness: Vec<AblationRun>,
}

impl AblationReport {
    pub fn variant_table(&self) -> String {
        let rows: Vec<(String, Vec<f64>)> = self
            .variants
            .iter()
            .map(|r| {
                (
                    format!("({}) {}", r.variant.column(), r.variant.as_str()),
                    r.report.map.clone(),
                )
            })
            .collect();
        render_table(&self.thresholds, &rows)
    }

    pub fn centerness_table(&self) -> String {
        let rows: Vec<(String, Vec<f64>)> = self
            .centerness
            .iter()
            .map(|r| (r.centerness.description().to_string(), r.report.map.clone()))
            .collect();
        render_table(&self.thresholds, &rows)
    }

    pub fn variant_map(&self, variant: SrfcVariant, t: f64) -> Option<f64> {
        self.variants
            .iter()
            .find(|r| r.variant == variant)
            .and_then(|r| r.report.map_at(t))
    }

    pub fn centerness_map(&self, mode: CenternessMode, t: f64) -> Option<f64> {
        self.centerness
            .iter()
            .find(|r| r.centerness == mode)
            .and_then(|r| r.report.map_at(t))
    }
}

/// Trains every requested configuration with the same seeds and budget.
/// A (variant, mode) pair appearing in both lists is trained once.
pub fn ablation_run(
    exp: &ExperimentConfig,
    data: &SyntheticDataset,
    variants: &[SrfcVariant],
    modes: &[CenternessMode],
    on_run: &mut dyn FnMut(&AblationRun),
) -> Result<AblationReport> {
    exp.validate()?;
    let mut done: Vec<AblationRun> = Vec::new();
    let mut run = |variant: SrfcVariant, mode: CenternessMode| -> Result<AblationRun> {
        if let Some(r) = done.iter().find(|r| r.variant == variant && r.centerness == mode) {
            return Ok(r.clone());
        }
        let mut cfg = exp.clone();
        cfg.model.variant = variant;
        cfg.train.centerness = mode;
        let (outcome, report) = train_and_evaluate(&cfg, data, &mut |_| {})?;
        let r = AblationRun {
            variant,
            centerness: mode,
            checkpoint_hash: outcome.checkpoint.content_hash()?,
            report,
        };
        on_run(&r);
        done.push(r.clone());
        Ok(r)
    };
    let variant_runs = variants
        .iter()
        .map(|&v| run(v, exp.train.centerness))
        .collect::<Result<Vec<_>>>()?;
    let mode_runs = modes
        .iter()
        .map(|&m| run(exp.model.variant, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        thresholds: exp.eval.thresholds.clone(),
        variants: variant_runs,
        centerness: mode_runs,
    })
}
