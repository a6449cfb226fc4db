use super::synth::AnnotatedSequence;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::targets::ActionInstance;

/// Minimum fraction of an instance that must fall inside a window for the
/// window to keep it as a training target.
pub const MIN_RETAINED_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// First frame of the window within the sequence.
    pub offset: usize,
    pub features: Tensor,
    /// Instances clipped to the window, in window-relative frames.
    pub instances: Vec<ActionInstance>,
}

/// Start frames of the windows covering a sequence of `len` frames.
///
/// Windows start every `stride` frames; when that leaves a tail uncovered, a
/// final window is aligned to the end of the sequence.
pub fn window_offsets(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(Error::invalid(
            "sliding_windows",
            "window and stride must be >= 1",
        ));
    }
    if window > len {
        return Err(Error::invalid(
            "sliding_windows",
            format!("window {window} is longer than the sequence ({len} frames)"),
        ));
    }
    let mut offsets: Vec<usize> = (0..=(len - window)).step_by(stride).collect();
    let last = *offsets.last().expect("at least one window");
    if last + window < len {
        offsets.push(len - window);
    }
    Ok(offsets)
}

/// Clips `inst` to `[offset, offset + window]`, shifted to window frames.
/// Returns `None` if less than [`MIN_RETAINED_FRACTION`] survives.
pub fn clip_instance(inst: &ActionInstance, offset: usize, window: usize) -> Option<ActionInstance> {
    let lo = offset as f64;
    let hi = (offset + window) as f64;
    let start = inst.start.max(lo);
    let end = inst.end.min(hi);
    if end <= start || (end - start) < MIN_RETAINED_FRACTION * inst.duration() {
        return None;
    }
    Some(ActionInstance {
        start: start - lo,
        end: end - lo,
        ..*inst
    })
}

pub fn sliding_windows(seq: &AnnotatedSequence, window: usize, stride: usize) -> Result<Vec<Window>> {
    let len = seq.len_frames();
    let offsets = window_offsets(len, window, stride)?;
    let channels = seq.features.shape()[0];
    offsets
        .into_iter()
        .map(|offset| {
            let mut features = Tensor::zeros(&[channels, window]);
            for c in 0..channels {
                features
                    .row_mut(c)
                    .copy_from_slice(&seq.features.row(c)[offset..offset + window]);
            }
            let instances = seq
                .instances
                .iter()
                .filter_map(|i| clip_instance(i, offset, window))
                .collect();
            Ok(Window {
                offset,
                features,
                instances,
            })
        })
        .collect()
}
