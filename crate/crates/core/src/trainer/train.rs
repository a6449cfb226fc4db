use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::optim::Optimizer;
use crate::autodiff::Tensor;
use crate::data::{sliding_windows, AnnotatedSequence};
use crate::error::{Error, Result};
use crate::head::HeadOutputs;
use crate::loss::{total_loss, LossConfig};
use crate::model::{Model, ModelConfig};
use crate::targets::{assign_targets, LocationTargets};

/// One training window with its precomputed location targets.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub features: Tensor,
    pub targets: LocationTargets,
}

/// Means over the epoch's steps unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub loss: f64,
    pub cls: f64,
    pub loc: f64,
    pub ctr: f64,
    /// Pre-clip global gradient norm.
    pub grad_norm: f64,
    pub max_grad_norm: f64,
    pub clipped_steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Cuts sequences into training windows. Sequences shorter than the window
/// form a single window of their own length.
pub fn prepare_samples(
    data: &[AnnotatedSequence],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<Vec<TrainSample>> {
    let stem = model_config.stem();
    let mut samples = Vec::new();
    for seq in data {
        let window = config.window_len.min(seq.len_frames());
        for w in sliding_windows(seq, window, config.window_stride)? {
            let len = stem.output_len(window);
            let targets = assign_targets(&w.instances, len, model_config.stride)?;
            samples.push(TrainSample {
                features: w.features,
                targets,
            });
        }
    }
    Ok(samples)
}

/// Data order for `epoch`: a permutation that depends only on `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn scale_outputs(g: &mut HeadOutputs, factor: f64) {
    g.cls.scale(factor);
    g.reg.scale(factor);
    g.ctr.scale(factor);
}

struct StepStats {
    loss: f64,
    cls: f64,
    loc: f64,
    ctr: f64,
    grad_norm: f64,
}

/// One optimisation step on the mean loss over `batch`.
fn train_step(
    model: &mut Model,
    optimizer: &mut Optimizer,
    batch: &[&TrainSample],
    loss_config: &LossConfig,
    config: &TrainConfig,
    lr: f64,
    (epoch, step): (usize, usize),
) -> Result<StepStats> {
    model.zero_grads();
    let inv = 1.0 / batch.len() as f64;
    let mut stats = StepStats {
        loss: 0.0,
        cls: 0.0,
        loc: 0.0,
        ctr: 0.0,
        grad_norm: 0.0,
    };
    for sample in batch {
        let (out, trace) = model.forward(&sample.features)?;
        let mut b = total_loss(&out, &sample.targets, model.config.stride, loss_config)?;
        if !b.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step,
                cls: b.cls,
                loc: b.loc,
                ctr: b.ctr,
                grad_norm: f64::NAN,
            });
        }
        stats.loss += b.total * inv;
        stats.cls += b.cls * inv;
        stats.loc += b.loc * inv;
        stats.ctr += b.ctr * inv;
        scale_outputs(&mut b.grads, inv);
        model.backward(&trace, &b.grads)?;
    }
    stats.grad_norm = model.clip_grad_norm(config.grad_clip_norm);
    if !stats.grad_norm.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            step,
            cls: stats.cls,
            loc: stats.loc,
            ctr: stats.ctr,
            grad_norm: stats.grad_norm,
        });
    }
    optimizer.apply(model, lr);
    Ok(stats)
}

/// Trains from scratch, or continues `resume` up to `config.epochs`.
///
/// `on_epoch` sees each epoch's metrics as soon as it finishes.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    data: &[AnnotatedSequence],
    resume: Option<&Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    model_config.validate()?;
    config.validate()?;
    let (mut model, mut optimizer, start) = match resume {
        Some(ck) => {
            let same = TrainConfig {
                epochs: config.epochs,
                ..ck.train_config.clone()
            };
            if ck.model_config != *model_config || same != *config {
                return Err(Error::Config(
                    "resume requires the checkpoint's configuration (only epochs may change)".into(),
                ));
            }
            let model = ck.model()?;
            let opt = ck.optimizer(&model)?;
            (model, opt, ck.epoch)
        }
        None => {
            let model = Model::new(*model_config, config.seed)?;
            let opt = Optimizer::new(config, &model);
            (model, opt, 0)
        }
    };

    let samples = prepare_samples(data, model_config, config)?;
    let loss_config = config.effective_loss();
    let mut metrics = Vec::new();
    for epoch in start..config.epochs {
        let lr = config.lr_at(epoch);
        let order = epoch_order(config.seed, epoch, samples.len());
        let mut m = EpochMetrics {
            epoch,
            lr,
            steps: 0,
            loss: 0.0,
            cls: 0.0,
            loc: 0.0,
            ctr: 0.0,
            grad_norm: 0.0,
            max_grad_norm: 0.0,
            clipped_steps: 0,
        };
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let s = train_step(
                &mut model,
                &mut optimizer,
                &batch,
                &loss_config,
                config,
                lr,
                (epoch, step),
            )?;
            m.steps += 1;
            m.loss += s.loss;
            m.cls += s.cls;
            m.loc += s.loc;
            m.ctr += s.ctr;
            m.grad_norm += s.grad_norm;
            m.max_grad_norm = m.max_grad_norm.max(s.grad_norm);
            if s.grad_norm > config.grad_clip_norm {
                m.clipped_steps += 1;
            }
        }
        let n = m.steps.max(1) as f64;
        m.loss /= n;
        m.cls /= n;
        m.loc /= n;
        m.ctr /= n;
        m.grad_norm /= n;
        on_epoch(&m);
        metrics.push(m);
    }
    let epoch = config.epochs.max(start);
    Ok(TrainOutcome {
        checkpoint: Checkpoint::capture(&model, config, &optimizer, epoch),
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::targets::ActionInstance;

    fn toy_model_config() -> ModelConfig {
        ModelConfig {
            in_dim: 4,
            channels: 8,
            stride: 4,
            n_classes: 2,
            ..ModelConfig::default()
        }
    }

    fn toy_data() -> Vec<AnnotatedSequence> {
        (0..4)
            .map(|i| {
                let mut f = Tensor::zeros(&[4, 64]);
                let s = 8 + 4 * i;
                for t in s..s + 20 {
                    f.row_mut(i % 2)[t] = 1.0;
                }
                AnnotatedSequence {
                    video_id: format!("v{i}"),
                    features: f,
                    instances: vec![ActionInstance::new(s as f64, (s + 20) as f64, 1 + i % 2).unwrap()],
                    fps: 25.0,
                }
            })
            .collect()
    }

    fn toy_train_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            window_len: 64,
            window_stride: 32,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let mc = toy_model_config();
        let out = train(&mc, &toy_train_config(0), &toy_data(), None, &mut |_| {}).unwrap();
        assert!(out.metrics.is_empty());
        let init = Model::new(mc, 5).unwrap();
        assert_eq!(out.checkpoint.model().unwrap().flat_params(), init.flat_params());
        assert_eq!(out.checkpoint.optimizer_step, 0);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        let a = epoch_order(1, 0, 50);
        assert_eq!(a, epoch_order(1, 0, 50));
        assert_ne!(a, epoch_order(1, 1, 50));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mc = toy_model_config();
        let data = toy_data();
        let full = train(&mc, &toy_train_config(3), &data, None, &mut |_| {}).unwrap();
        let first = train(&mc, &toy_train_config(1), &data, None, &mut |_| {}).unwrap();
        let rest = train(&mc, &toy_train_config(3), &data, Some(&first.checkpoint), &mut |_| {}).unwrap();
        assert_eq!(rest.checkpoint, full.checkpoint);
        assert_eq!(rest.metrics[..], full.metrics[1..]);
    }

    #[test]
    fn resume_rejects_changed_config() {
        let mc = toy_model_config();
        let data = toy_data();
        let first = train(&mc, &toy_train_config(1), &data, None, &mut |_| {}).unwrap();
        let changed = TrainConfig {
            lr: 1e-2,
            ..toy_train_config(2)
        };
        assert!(train(&mc, &changed, &data, Some(&first.checkpoint), &mut |_| {}).is_err());
    }
}
