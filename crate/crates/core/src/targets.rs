//! Per-location supervision for the anchor-free head.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labelled temporal segment in frames. `score` is set on predictions only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub start: f64,
    pub end: f64,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl ActionInstance {
    /// A ground-truth instance; label 0 is reserved for background.
    pub fn new(start: f64, end: f64, label: usize) -> Result<Self> {
        let inst = ActionInstance {
            start,
            end,
            label,
            score: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "non-finite bounds [{}, {}]",
                self.start, self.end
            )));
        }
        if self.start < 0.0 {
            return Err(Error::InvalidInstance(format!(
                "start {} is negative",
                self.start
            )));
        }
        if self.end <= self.start {
            return Err(Error::InvalidInstance(format!(
                "end {} must be greater than start {}",
                self.end, self.start
            )));
        }
        if self.label == 0 {
            return Err(Error::InvalidInstance(
                "label 0 is reserved for background".into(),
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn contains(&self, frame: f64) -> bool {
        self.start <= frame && frame <= self.end
    }
}

/// Frame at the centre of location `x`'s stride window: `s/2 + x·s`.
pub fn location_to_frame(x: usize, stride: usize) -> f64 {
    stride as f64 / 2.0 + (x * stride) as f64
}

/// `sqrt(min(l, r) / max(l, r))`; 0 when both distances are 0.
pub fn centerness_target(l: f64, r: f64) -> f64 {
    let hi = l.max(r);
    if hi <= 0.0 {
        return 0.0;
    }
    (l.min(r).max(0.0) / hi).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationTargets {
    /// Class per location, 0 for background.
    pub labels: Vec<usize>,
    /// `(l*, r*)` in frames at positive locations.
    pub offsets: Vec<Option<(f64, f64)>>,
    pub centerness: Vec<Option<f64>>,
}

impl LocationTargets {
    pub fn background(len: usize) -> Self {
        LocationTargets {
            labels: vec![0; len],
            offsets: vec![None; len],
            centerness: vec![None; len],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&c| c > 0).count()
    }
}

/// Ordering used to choose among instances containing the same frame: nearest
/// centre, then earlier start, then shorter duration, then smaller label.
fn assignment_order(frame: f64, a: &ActionInstance, b: &ActionInstance) -> Ordering {
    let da = (frame - a.center()).abs();
    let db = (frame - b.center()).abs();
    da.total_cmp(&db)
        .then(a.start.total_cmp(&b.start))
        .then(a.duration().total_cmp(&b.duration()))
        .then(a.label.cmp(&b.label))
}

/// Assigns each of `len` locations to the containing instance whose centre is
/// nearest its frame.
pub fn assign_targets(
    instances: &[ActionInstance],
    len: usize,
    stride: usize,
) -> Result<LocationTargets> {
    for inst in instances {
        inst.validate()?;
    }
    let mut targets = LocationTargets::background(len);
    for x in 0..len {
        let f = location_to_frame(x, stride);
        let best = instances
            .iter()
            .filter(|i| i.contains(f))
            .min_by(|a, b| assignment_order(f, a, b));
        if let Some(inst) = best {
            let (l, r) = (f - inst.start, inst.end - f);
            targets.labels[x] = inst.label;
            targets.offsets[x] = Some((l, r));
            targets.centerness[x] = Some(centerness_target(l, r));
        }
    }
    Ok(targets)
}
