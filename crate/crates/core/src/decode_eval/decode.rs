use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::head::HeadOutputs;
use crate::targets::{centerness_target, location_to_frame};

/// A scored, labelled segment in video frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub start: f64,
    pub end: f64,
    pub label: usize,
    pub score: f64,
}

impl Detection {
    pub fn interval(&self) -> (f64, f64) {
        (self.start, self.end)
    }
}

/// Ranking order: score descending, then earlier start, smaller label,
/// earlier end.
pub fn ranking_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.start.total_cmp(&b.start))
        .then(a.label.cmp(&b.label))
        .then(a.end.total_cmp(&b.end))
}

/// How the center-ness factor of the ranking score is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenternessMode {
    /// Ranking score is the classification score alone.
    None,
    /// Center-ness computed from the predicted `(l, r)` instead of a branch.
    FromRegression,
    /// The learned center-ness branch.
    Learned,
}

impl CenternessMode {
    pub const ALL: [CenternessMode; 3] = [
        CenternessMode::None,
        CenternessMode::FromRegression,
        CenternessMode::Learned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CenternessMode::None => "none",
            CenternessMode::FromRegression => "from_regression",
            CenternessMode::Learned => "learned",
        }
    }

    /// Row label used in comparison tables.
    pub fn description(self) -> &'static str {
        match self {
            CenternessMode::None => "None",
            CenternessMode::FromRegression => "center-ness w/o prediction",
            CenternessMode::Learned => "center-ness",
        }
    }

    /// Whether the center-ness branch receives a training signal.
    pub fn trains_branch(self) -> bool {
        self == CenternessMode::Learned
    }
}

impl fmt::Display for CenternessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CenternessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CenternessMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown center-ness mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub stride: usize,
    /// Frame of the window's first input frame within the video.
    pub window_offset: f64,
    /// Detections are clipped to `[0, video_len]`.
    pub video_len: f64,
    pub centerness: CenternessMode,
}

/// One detection per (location, class). Location `x` maps to frame
/// `s/2 + x·s`; its segment is `[f − l, f + r]` with `(l, r) = exp(reg)·s`.
/// Segments clipped to nothing are dropped.
pub fn decode(outputs: &HeadOutputs, params: &DecodeParams) -> Vec<Detection> {
    let s = params.stride as f64;
    let mut dets = Vec::with_capacity(outputs.len() * outputs.n_classes());
    for x in 0..outputs.len() {
        let f = location_to_frame(x, params.stride) + params.window_offset;
        let l = outputs.reg.get2(0, x).exp() * s;
        let r = outputs.reg.get2(1, x).exp() * s;
        let start = (f - l).clamp(0.0, params.video_len);
        let end = (f + r).clamp(0.0, params.video_len);
        if end <= start {
            continue;
        }
        let ctr = match params.centerness {
            CenternessMode::None => 1.0,
            CenternessMode::FromRegression => centerness_target(l, r),
            CenternessMode::Learned => sigmoid(outputs.ctr.data()[x]),
        };
        for k in 0..outputs.n_classes() {
            dets.push(Detection {
                start,
                end,
                label: k + 1,
                score: sigmoid(outputs.cls.get2(k, x)) * ctr,
            });
        }
    }
    dets
}

/// Keeps detections scoring at least `alpha`.
pub fn filter_threshold(mut dets: Vec<Detection>, alpha: f64) -> Vec<Detection> {
    dets.retain(|d| d.score >= alpha);
    dets
}

/// The `k` best detections in ranking order.
pub fn top_k(mut dets: Vec<Detection>, k: usize) -> Vec<Detection> {
    dets.sort_by(ranking_order);
    dets.truncate(k);
    dets
}
