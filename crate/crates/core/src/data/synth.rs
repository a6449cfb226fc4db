//! Synthetic untrimmed "videos": per-frame feature sequences with
//! non-overlapping labelled action spans.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::targets::ActionInstance;

/// Rejection-sampling budget for packing one sequence.
pub const MAX_PACKING_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    /// Training sequences.
    pub n_sequences: usize,
    /// Held-out sequences, generated after the training ones.
    pub n_eval_sequences: usize,
    pub seq_len_frames: usize,
    pub feature_dim: usize,
    /// Inclusive `[min, max]` instance duration in frames.
    pub duration_range: [usize; 2],
    /// Inclusive `[min, max]` instance count per sequence.
    pub instances_per_sequence: [usize; 2],
    pub noise_std: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 3,
            n_sequences: 200,
            n_eval_sequences: 50,
            seq_len_frames: 768,
            feature_dim: 16,
            duration_range: [16, 192],
            instances_per_sequence: [1, 4],
            noise_std: 0.1,
            fps: 25.0,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [dmin, dmax] = self.duration_range;
        let [imin, imax] = self.instances_per_sequence;
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be positive".into()));
        }
        if self.feature_dim < self.n_classes {
            return Err(Error::Config(format!(
                "feature_dim {} cannot hold {} disjoint class channel groups",
                self.feature_dim, self.n_classes
            )));
        }
        if dmin < 2 || dmin > dmax {
            return Err(Error::Config(format!(
                "duration range [{dmin}, {dmax}] must satisfy 2 <= min <= max"
            )));
        }
        if dmax > self.seq_len_frames {
            return Err(Error::Config(format!(
                "max duration {dmax} exceeds sequence length {}",
                self.seq_len_frames
            )));
        }
        if imin > imax {
            return Err(Error::Config(format!(
                "instance count range [{imin}, {imax}] is empty"
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        Ok(())
    }

    /// Channels carrying class `label`'s pattern (1-based label).
    pub fn class_channels(&self, label: usize) -> std::ops::Range<usize> {
        let group = self.feature_dim / self.n_classes;
        (label - 1) * group..label * group
    }

    /// Period in frames of class `label`'s sinusoid.
    pub fn class_period(&self, label: usize) -> f64 {
        8.0 * (label + 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSequence {
    pub video_id: String,
    /// `feature_dim × length`.
    pub features: Tensor,
    pub instances: Vec<ActionInstance>,
    pub fps: f64,
}

impl AnnotatedSequence {
    pub fn len_frames(&self) -> usize {
        self.features.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<AnnotatedSequence>,
    pub eval: Vec<AnnotatedSequence>,
}

pub fn video_id(index: usize) -> String {
    format!("synth_{index:05}")
}

/// Generates `n_sequences` training and `n_eval_sequences` held-out sequences.
/// Sequence `i` depends only on `seed ^ i` and the config.
pub fn generate_dataset(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let total = config.n_sequences + config.n_eval_sequences;
    let mut all = (0..total)
        .into_par_iter()
        .map(|i| generate_sequence(config, i))
        .collect::<Result<Vec<_>>>()?;
    let eval = all.split_off(config.n_sequences);
    Ok(SyntheticDataset { train: all, eval })
}

pub fn generate_sequence(config: &SynthConfig, index: usize) -> Result<AnnotatedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ index as u64);
    let len = config.seq_len_frames;
    let instances = sample_instances(config, &mut rng)?;

    let noise = Normal::new(0.0, config.noise_std).expect("validated noise std");
    let mut features = Tensor::zeros(&[config.feature_dim, len]);
    for v in features.data_mut() {
        *v = if config.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
    }
    for inst in &instances {
        let channels = config.class_channels(inst.label);
        let group = channels.len() as f64;
        let period = config.class_period(inst.label);
        let (s, e) = (inst.start as usize, inst.end as usize);
        for (j, c) in channels.enumerate() {
            let phase = PI * j as f64 / group;
            let row = features.row_mut(c);
            for (t, v) in row[s..e].iter_mut().enumerate() {
                *v += (2.0 * PI * t as f64 / period + phase).sin();
            }
        }
    }
    // Values live on disk as f32; keep memory and disk identical.
    for v in features.data_mut() {
        *v = *v as f32 as f64;
    }
    Ok(AnnotatedSequence {
        video_id: video_id(index),
        features,
        instances,
        fps: config.fps,
    })
}

/// Draws the instance count, then durations and labels; a draw whose total
/// duration exceeds the sequence is rejected. Accepted draws are placed with
/// gaps drawn uniformly over all compositions of the free frames, so the
/// duration marginal stays exactly uniform and placement never fails.
fn sample_instances(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<ActionInstance>> {
    let [imin, imax] = config.instances_per_sequence;
    let [dmin, dmax] = config.duration_range;
    let len = config.seq_len_frames;
    let count = rng.random_range(imin..=imax);
    for _ in 0..MAX_PACKING_ATTEMPTS {
        let spans: Vec<(usize, usize)> = (0..count)
            .map(|_| (rng.random_range(dmin..=dmax), rng.random_range(1..=config.n_classes)))
            .collect();
        let total: usize = spans.iter().map(|s| s.0).sum();
        if total > len {
            continue;
        }
        let gaps = uniform_composition(len - total, count + 1, rng);
        let mut pos = gaps[0];
        let mut out = Vec::with_capacity(count);
        for (&(d, label), &gap) in spans.iter().zip(&gaps[1..]) {
            out.push(ActionInstance::new(pos as f64, (pos + d) as f64, label)?);
            pos += d + gap;
        }
        return Ok(out);
    }
    Err(Error::InfeasiblePacking {
        instances: count,
        length: len,
        attempts: MAX_PACKING_ATTEMPTS,
    })
}

/// `parts` non-negative integers summing to `total`, uniform over all such
/// compositions (stars and bars: choose `parts − 1` bar positions among
/// `total + parts − 1` slots).
fn uniform_composition(total: usize, parts: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let bars = parts - 1;
    let mut idx = rand::seq::index::sample(rng, total + bars, bars).into_vec();
    idx.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for (i, &b) in idx.iter().enumerate() {
        let cut = b - i;
        out.push(cut - prev);
        prev = cut;
    }
    out.push(total - prev);
    out
}
