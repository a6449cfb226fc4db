//! Finite-difference checks of every differentiable operation, one adapter
//! per op, plus an end-to-end check of the whole detector and its loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    channel_pool_backward, channel_pool_forward, conv1d_backward, conv1d_forward,
    grad_check_at, relu_backward, relu_forward, sigmoid_backward, sigmoid_forward,
    softmax_channels_backward, softmax_channels_forward, temporal_maxpool_backward,
    temporal_maxpool_forward, ConvSpec, DifferentiableOp, Tensor,
};
use crate::error::Result;
use crate::head::StemInit;
use crate::loss::{bce_with_logits, focal_loss, tiou_loss, total_loss, LossConfig};
use crate::model::{Model, ModelConfig};
use crate::srfc::{Srfc, SrfcConfig, SrfcVariant};
use crate::targets::{assign_targets, ActionInstance};

/// Per-op tolerance on the relative error.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for the whole-model check.
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

const CHANNELS: usize = 4;
const LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub op: String,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn randn(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, std, rng)
}

struct ConvOp {
    name: String,
    spec: ConvSpec,
}

impl DifferentiableOp for ConvOp {
    fn name(&self) -> &str {
        &self.name
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        conv1d_forward(&x[0], &self.spec, &x[1], &x[2])
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let grads = conv1d_backward(g, Some(&x[0]), &self.spec, &x[1])?;
        Ok(vec![grads.input, grads.weight, grads.bias])
    }
}

struct Relu;

impl DifferentiableOp for Relu {
    fn name(&self) -> &str {
        "relu"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        Ok(relu_forward(&x[0]))
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![relu_backward(&x[0], g)?])
    }
}

struct Sigmoid;

impl DifferentiableOp for Sigmoid {
    fn name(&self) -> &str {
        "sigmoid"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        Ok(sigmoid_forward(&x[0]))
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![sigmoid_backward(&sigmoid_forward(&x[0]), g)?])
    }
}

/// Output rows: `[avg; max]`.
struct ChannelPoolOp;

impl DifferentiableOp for ChannelPoolOp {
    fn name(&self) -> &str {
        "channel_pool"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        let p = channel_pool_forward(&x[0])?;
        let mut data = p.avg.into_data();
        data.extend_from_slice(p.max.data());
        Tensor::new(vec![2, x[0].shape()[1]], data)
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let p = channel_pool_forward(&x[0])?;
        let len = x[0].shape()[1];
        let ga = Tensor::new(vec![1, len], g.row(0).to_vec())?;
        let gm = Tensor::new(vec![1, len], g.row(1).to_vec())?;
        Ok(vec![channel_pool_backward(&p, x[0].shape()[0], &ga, &gm)?])
    }
}

struct TemporalPoolOp {
    name: String,
    window: usize,
    stride: usize,
}

impl DifferentiableOp for TemporalPoolOp {
    fn name(&self) -> &str {
        &self.name
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        Ok(temporal_maxpool_forward(&x[0], self.window, self.stride)?.output)
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let p = temporal_maxpool_forward(&x[0], self.window, self.stride)?;
        Ok(vec![temporal_maxpool_backward(&p, g)?])
    }
}

struct SoftmaxOp;

impl DifferentiableOp for SoftmaxOp {
    fn name(&self) -> &str {
        "softmax_channels"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        softmax_channels_forward(&x[0])
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![softmax_channels_backward(&softmax_channels_forward(&x[0])?, g)?])
    }
}

/// Scalar focal loss of the logits against fixed labels.
struct FocalOp {
    labels: Vec<usize>,
}

impl DifferentiableOp for FocalOp {
    fn name(&self) -> &str {
        "focal_loss"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        let (l, _) = focal_loss(&x[0], &self.labels, 2.0, 0.25)?;
        Ok(Tensor::full(&[1], l))
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let (_, mut grad) = focal_loss(&x[0], &self.labels, 2.0, 0.25)?;
        grad.scale(g.data()[0]);
        Ok(vec![grad])
    }
}

/// Per-location tIoU loss of offsets `exp(reg)` against fixed targets.
struct TiouOp {
    targets: Vec<(f64, f64)>,
}

impl DifferentiableOp for TiouOp {
    fn name(&self) -> &str {
        "tiou_loss"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        let mut out = Vec::with_capacity(self.targets.len());
        for (i, t) in self.targets.iter().enumerate() {
            let pred = (x[0].get2(0, i).exp(), x[0].get2(1, i).exp());
            out.push(tiou_loss(pred, *t)?.0);
        }
        Tensor::new(vec![self.targets.len()], out)
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let mut grad = Tensor::zeros(x[0].shape());
        for (i, t) in self.targets.iter().enumerate() {
            let pred = (x[0].get2(0, i).exp(), x[0].get2(1, i).exp());
            let (_, [gl, gr]) = tiou_loss(pred, *t)?;
            grad.row_mut(0)[i] = g.data()[i] * gl * pred.0;
            grad.row_mut(1)[i] = g.data()[i] * gr * pred.1;
        }
        Ok(vec![grad])
    }
}

/// Per-location BCE of logits against fixed soft targets.
struct BceOp {
    targets: Vec<f64>,
}

impl DifferentiableOp for BceOp {
    fn name(&self) -> &str {
        "bce_with_logits"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        let out = x[0]
            .data()
            .iter()
            .zip(&self.targets)
            .map(|(&z, &y)| bce_with_logits(z, y).0)
            .collect();
        Tensor::new(x[0].shape().to_vec(), out)
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let out = x[0]
            .data()
            .iter()
            .zip(&self.targets)
            .zip(g.data())
            .map(|((&z, &y), &gv)| gv * bce_with_logits(z, y).1)
            .collect();
        Ok(vec![Tensor::new(x[0].shape().to_vec(), out)?])
    }
}

fn load_params(visit: impl FnOnce(&mut dyn FnMut(String, &mut Tensor)), values: &[Tensor]) {
    let mut i = 0;
    visit(&mut |_, t| {
        t.data_mut().copy_from_slice(values[i].data());
        t.zero_grad();
        i += 1;
    });
}

fn param_grads(visit: impl FnOnce(&mut dyn FnMut(String, &mut Tensor))) -> Vec<Tensor> {
    let mut out = Vec::new();
    visit(&mut |_, t| {
        let g = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]);
        out.push(Tensor::new(t.shape().to_vec(), g).expect("matching shape"));
    });
    out
}

/// The SRFC block as a function of its input (first) and all its parameters.
struct SrfcOp {
    block: Srfc,
}

impl SrfcOp {
    fn with(&self, params: &[Tensor]) -> Srfc {
        let mut b = self.block.clone();
        load_params(|f| b.visit_params_mut("srfc", f), params);
        b
    }
}

impl DifferentiableOp for SrfcOp {
    fn name(&self) -> &str {
        "srfc"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        Ok(self.with(&x[1..]).forward(&x[0])?.0)
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let mut b = self.with(&x[1..]);
        b.visit_params_mut("srfc", &mut |_, t| {
            t.grad_mut();
        });
        let (_, trace) = b.forward(&x[0])?;
        let gx = b.backward(&trace, g)?;
        let mut out = vec![gx];
        out.extend(param_grads(|f| b.visit_params_mut("srfc", f)));
        Ok(out)
    }
}

/// Total detector loss on a fixed window as a function of every parameter.
struct ModelLossOp {
    model: Model,
    features: Tensor,
    targets: crate::targets::LocationTargets,
}

impl ModelLossOp {
    fn with(&self, params: &[Tensor]) -> Model {
        let mut m = self.model.clone();
        load_params(|f| m.visit_params_mut(f), params);
        m
    }
}

impl DifferentiableOp for ModelLossOp {
    fn name(&self) -> &str {
        "full_model"
    }
    fn forward(&self, x: &[Tensor]) -> Result<Tensor> {
        let m = self.with(x);
        let (out, _) = m.forward(&self.features)?;
        let b = total_loss(&out, &self.targets, m.config.stride, &LossConfig::default())?;
        Ok(Tensor::full(&[1], b.total))
    }
    fn backward(&self, x: &[Tensor], g: &Tensor) -> Result<Vec<Tensor>> {
        let mut m = self.with(x);
        m.zero_grads();
        let (out, trace) = m.forward(&self.features)?;
        let mut b = total_loss(&out, &self.targets, m.config.stride, &LossConfig::default())?;
        let s = g.data()[0];
        b.grads.cls.scale(s);
        b.grads.reg.scale(s);
        b.grads.ctr.scale(s);
        m.backward(&trace, &b.grads)?;
        Ok(param_grads(|f| m.visit_params_mut(f)))
    }
}

/// Standard-normal values pushed at least `gap` away from zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = randn(shape, 1.0, rng);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + gap);
    }
    t
}

/// Toy detector used for the end-to-end check.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        in_dim: 4,
        channels: 8,
        stride: 4,
        n_classes: 4,
        variant: SrfcVariant::Srf,
        init_std: 0.3,
        stem_init: StemInit::Normal,
        ..ModelConfig::default()
    }
}

/// A random window of 64 frames with two disjoint instances.
fn toy_scene(rng: &mut ChaCha8Rng, n_classes: usize) -> (Tensor, Vec<ActionInstance>) {
    let features = randn(&[4, 64], 1.0, rng);
    let s1 = rng.random_range(0..12) as f64;
    let e1 = s1 + rng.random_range(6..20) as f64;
    let s2 = rng.random_range(34..44) as f64;
    let e2 = s2 + rng.random_range(6..20) as f64;
    let instances = vec![
        ActionInstance::new(s1, e1, rng.random_range(1..=n_classes)).expect("valid"),
        ActionInstance::new(s2, e2, rng.random_range(1..=n_classes)).expect("valid"),
    ];
    (features, instances)
}

fn check_seeds(
    name: &str,
    tolerance: f64,
    seeds: &[u64],
    mut case: impl FnMut(&mut ChaCha8Rng) -> Result<(Box<dyn DifferentiableOp>, Vec<Tensor>)>,
) -> Result<GradCheckReport> {
    let mut worst = 0.0f64;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (op, inputs) = case(&mut rng)?;
        worst = worst.max(grad_check_at(op.as_ref(), inputs, seed ^ 0x5eed)?);
    }
    Ok(GradCheckReport {
        op: name.to_string(),
        seeds: seeds.len(),
        max_rel_error: worst,
        tolerance,
    })
}

/// Runs every check over `seeds`, in a fixed order.
pub fn run_gradient_suite(seeds: &[u64]) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    for dilation in [1, 3, 5] {
        let name = format!("conv1d_dilation_{dilation}");
        reports.push(check_seeds(&name, OP_TOLERANCE, seeds, |rng| {
            let spec = ConvSpec::new(CHANNELS, 3, 3, dilation)?;
            let inputs = vec![
                randn(&[CHANNELS, LEN], 1.0, rng),
                randn(&spec.weight_shape(), 1.0, rng),
                randn(&[3], 1.0, rng),
            ];
            let op: Box<dyn DifferentiableOp> = Box::new(ConvOp { name: name.clone(), spec });
            Ok((op, inputs))
        })?);
    }
    reports.push(check_seeds("relu", OP_TOLERANCE, seeds, |rng| {
        Ok((Box::new(Relu) as Box<dyn DifferentiableOp>, vec![away_from_zero(&[CHANNELS, LEN], 1e-2, rng)]))
    })?);
    reports.push(check_seeds("sigmoid", OP_TOLERANCE, seeds, |rng| {
        Ok((Box::new(Sigmoid) as Box<dyn DifferentiableOp>, vec![randn(&[CHANNELS, LEN], 3.0, rng)]))
    })?);
    reports.push(check_seeds("channel_pool", OP_TOLERANCE, seeds, |rng| {
        Ok((Box::new(ChannelPoolOp) as Box<dyn DifferentiableOp>, vec![randn(&[8, LEN], 1.0, rng)]))
    })?);
    for (window, stride) in [(2, 2), (3, 2)] {
        let name = format!("temporal_maxpool_{window}_{stride}");
        reports.push(check_seeds(&name, OP_TOLERANCE, seeds, |rng| {
            let op: Box<dyn DifferentiableOp> = Box::new(TemporalPoolOp {
                name: name.clone(),
                window,
                stride,
            });
            Ok((op, vec![randn(&[CHANNELS, LEN + 1], 1.0, rng)]))
        })?);
    }
    reports.push(check_seeds("softmax_channels", OP_TOLERANCE, seeds, |rng| {
        Ok((Box::new(SoftmaxOp) as Box<dyn DifferentiableOp>, vec![randn(&[3, LEN], 2.0, rng)]))
    })?);
    reports.push(check_seeds("focal_loss", OP_TOLERANCE, seeds, |rng| {
        let labels = (0..LEN).map(|_| rng.random_range(0..=3)).collect();
        Ok((Box::new(FocalOp { labels }) as Box<dyn DifferentiableOp>, vec![randn(&[3, LEN], 2.0, rng)]))
    })?);
    reports.push(check_seeds("tiou_loss", OP_TOLERANCE, seeds, |rng| {
        let targets = (0..LEN)
            .map(|_| (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)))
            .collect();
        Ok((Box::new(TiouOp { targets }) as Box<dyn DifferentiableOp>, vec![randn(&[2, LEN], 1.0, rng)]))
    })?);
    reports.push(check_seeds("bce_with_logits", OP_TOLERANCE, seeds, |rng| {
        let targets = (0..LEN).map(|_| rng.random_range(0.0..=1.0)).collect();
        Ok((Box::new(BceOp { targets }) as Box<dyn DifferentiableOp>, vec![randn(&[1, LEN], 3.0, rng)]))
    })?);
    reports.push(check_seeds("srfc", OP_TOLERANCE, seeds, |rng| {
        let config = SrfcConfig {
            channels: CHANNELS,
            ..SrfcConfig::default()
        };
        let block = Srfc::new(config, 0.5, rng)?;
        let mut inputs = vec![randn(&[CHANNELS, LEN], 1.0, rng)];
        block.visit_params("srfc", &mut |_, t| inputs.push(t.detached()));
        // zero biases put every fuse ReLU input near a shared value; spread them
        for t in inputs.iter_mut().skip(1) {
            if t.shape().len() == 1 {
                *t = randn(t.shape(), 0.5, rng);
            }
        }
        Ok((Box::new(SrfcOp { block }) as Box<dyn DifferentiableOp>, inputs))
    })?);
    let config = toy_model_config();
    reports.push(check_seeds("full_model", END_TO_END_TOLERANCE, seeds, |rng| {
        let model = Model::new(config, rng.random())?;
        let (features, instances) = toy_scene(rng, config.n_classes);
        let targets = assign_targets(&instances, 16, config.stride)?;
        let inputs = model.named_params().into_iter().map(|(_, t)| t.detached()).collect();
        let op = ModelLossOp {
            model,
            features,
            targets,
        };
        Ok((Box::new(op) as Box<dyn DifferentiableOp>, inputs))
    })?);
    Ok(reports)
}
