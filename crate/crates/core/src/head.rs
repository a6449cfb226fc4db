//! Feature stem and the per-location predictor head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    relu_backward, relu_forward, temporal_maxpool_backward, temporal_maxpool_forward, Conv1d,
    ConvSpec, TemporalMaxPool, Tensor,
};
use crate::error::{Error, Result};

const KERNEL: usize = 3;

/// Weight initialisation of the stem convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemInit {
    /// Normal with the model-wide `init_std`.
    Normal,
    /// Normal with std `sqrt(2 / fan_in)`; keeps post-ReLU activations at unit scale.
    #[default]
    HeNormal,
}

impl StemInit {
    fn std(self, base: f64, fan_in: usize) -> f64 {
        match self {
            StemInit::Normal => base,
            StemInit::HeNormal => (2.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Stand-in for the video backbone: maps per-frame features to a
/// `channels × ⌈L/stride⌉` temporal feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemConfig {
    pub in_dim: usize,
    pub channels: usize,
    pub stride: usize,
    pub init: StemInit,
}

impl StemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.channels == 0 {
            return Err(Error::Config("stem widths must be positive".into()));
        }
        if !self.stride.is_power_of_two() {
            return Err(Error::Config(format!(
                "stem stride {} must be a power of two",
                self.stride
            )));
        }
        Ok(())
    }

    pub fn n_pools(&self) -> usize {
        self.stride.trailing_zeros() as usize
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        input_len.div_ceil(self.stride)
    }
}

/// conv → ReLU → pool → conv → ReLU → pool × (log2(stride) − 1).
///
/// Every pool has window 2 and stride 2. With stride 1 there is no pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Stem {
    pub config: StemConfig,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
}

#[derive(Debug, Clone)]
pub struct StemTrace {
    input: Tensor,
    pre1: Tensor,
    act1: Tensor,
    pool1: Option<TemporalMaxPool>,
    pre2: Tensor,
    act2: Tensor,
    pools: Vec<TemporalMaxPool>,
}

impl Stem {
    /// `std` is used only with [`StemInit::Normal`].
    pub fn new<R: Rng + ?Sized>(config: StemConfig, std: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let s1 = ConvSpec::new(config.in_dim, config.channels, KERNEL, 1)?;
        let s2 = ConvSpec::new(config.channels, config.channels, KERNEL, 1)?;
        let std1 = config.init.std(std, KERNEL * config.in_dim);
        let std2 = config.init.std(std, KERNEL * config.channels);
        Ok(Stem {
            config,
            conv1: Conv1d::normal(s1, std1, 0.0, rng),
            conv2: Conv1d::normal(s2, std2, 0.0, rng),
        })
    }

    pub fn forward(&self, features: &Tensor) -> Result<(Tensor, StemTrace)> {
        let (dim, len) = features.dims2("stem")?;
        if dim != self.config.in_dim {
            return Err(Error::ShapeMismatch {
                op: "stem",
                axis: "feature dim",
                expected: self.config.in_dim,
                actual: dim,
            });
        }
        let s = self.config.stride;
        if len < s {
            return Err(Error::invalid(
                "stem",
                format!("sequence length {len} is shorter than stride {s}"),
            ));
        }
        let input = zero_extend(features, len.div_ceil(s) * s)?;
        let pre1 = self.conv1.forward(&input)?;
        let act1 = relu_forward(&pre1);
        let n_pools = self.config.n_pools();
        let pool1 = if n_pools > 0 {
            Some(temporal_maxpool_forward(&act1, 2, 2)?)
        } else {
            None
        };
        let pre2 = self.conv2.forward(pool1.as_ref().map_or(&act1, |p| &p.output))?;
        let act2 = relu_forward(&pre2);
        let mut pools: Vec<TemporalMaxPool> = Vec::with_capacity(n_pools.saturating_sub(1));
        for _ in 1..n_pools {
            let src = pools.last().map_or(&act2, |p| &p.output);
            let p = temporal_maxpool_forward(src, 2, 2)?;
            pools.push(p);
        }
        let out = pools.last().map_or(&act2, |p| &p.output).clone();
        Ok((
            out,
            StemTrace {
                input,
                pre1,
                act1,
                pool1,
                pre2,
                act2,
                pools,
            },
        ))
    }

    /// Accumulates parameter gradients. The input gradient is not needed.
    pub fn backward(&mut self, trace: &StemTrace, grad_out: &Tensor) -> Result<()> {
        let mut g = grad_out.detached();
        for p in trace.pools.iter().rev() {
            g = temporal_maxpool_backward(p, &g)?;
        }
        let g = relu_backward(&trace.pre2, &g)?;
        let conv2_in = trace.pool1.as_ref().map_or(&trace.act1, |p| &p.output);
        let mut g = self.conv2.backward(conv2_in, &g)?;
        if let Some(p) = &trace.pool1 {
            g = temporal_maxpool_backward(p, &g)?;
        }
        let g = relu_backward(&trace.pre1, &g)?;
        self.conv1.backward(&trace.input, &g)?;
        Ok(())
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.conv1.visit_params_mut(&format!("{prefix}.conv1"), f);
        self.conv2.visit_params_mut(&format!("{prefix}.conv2"), f);
    }
}

impl StemTrace {
    /// Post-ReLU output of the second convolution, before the final pools.
    pub fn last_activation(&self) -> &Tensor {
        &self.act2
    }
}

/// Pads the time axis with zeros up to `len`.
fn zero_extend(x: &Tensor, len: usize) -> Result<Tensor> {
    let (c, t) = x.dims2("zero_extend")?;
    if t == len {
        return Ok(x.detached());
    }
    let mut out = Tensor::zeros(&[c, len]);
    for ch in 0..c {
        out.row_mut(ch)[..t].copy_from_slice(x.row(ch));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub channels: usize,
    pub hidden: usize,
    pub n_classes: usize,
    /// Initial foreground probability encoded in the final classifier bias.
    pub prior: f64,
}

/// Raw head activations for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    /// `n_classes × T` pre-sigmoid logits.
    pub cls: Tensor,
    /// `2 × T` raw offsets; see [`decode_offsets`].
    pub reg: Tensor,
    /// `1 × T` pre-sigmoid center-ness logits.
    pub ctr: Tensor,
}

impl HeadOutputs {
    pub fn len(&self) -> usize {
        self.cls.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_classes(&self) -> usize {
        self.cls.shape()[0]
    }

    pub fn zeros_like(&self) -> HeadOutputs {
        HeadOutputs {
            cls: Tensor::zeros(self.cls.shape()),
            reg: Tensor::zeros(self.reg.shape()),
            ctr: Tensor::zeros(self.ctr.shape()),
        }
    }
}

/// Classification tower, regression tower, and a center-ness conv that taps
/// the regression tower's hidden features.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub config: HeadConfig,
    pub cls_hidden: Conv1d,
    pub cls_out: Conv1d,
    pub reg_hidden: Conv1d,
    pub reg_out: Conv1d,
    pub ctr_out: Conv1d,
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    input: Tensor,
    cls_pre: Tensor,
    cls_act: Tensor,
    reg_pre: Tensor,
    reg_act: Tensor,
}

impl Head {
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, std: f64, rng: &mut R) -> Result<Self> {
        if !(config.prior > 0.0 && config.prior < 1.0) {
            return Err(Error::Config(format!(
                "classifier prior {} must lie in (0, 1)",
                config.prior
            )));
        }
        let (c, h) = (config.channels, config.hidden);
        let prior_bias = -((1.0 - config.prior) / config.prior).ln();
        Ok(Head {
            cls_hidden: Conv1d::normal(ConvSpec::new(c, h, KERNEL, 1)?, std, 0.0, rng),
            cls_out: Conv1d::normal(
                ConvSpec::new(h, config.n_classes, KERNEL, 1)?,
                std,
                prior_bias,
                rng,
            ),
            reg_hidden: Conv1d::normal(ConvSpec::new(c, h, KERNEL, 1)?, std, 0.0, rng),
            reg_out: Conv1d::normal(ConvSpec::new(h, 2, KERNEL, 1)?, std, 0.0, rng),
            ctr_out: Conv1d::normal(ConvSpec::new(h, 1, KERNEL, 1)?, std, 0.0, rng),
            config,
        })
    }

    pub fn forward(&self, v: &Tensor) -> Result<(HeadOutputs, HeadTrace)> {
        let (c, _) = v.dims2("head")?;
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                op: "head",
                axis: "channels",
                expected: self.config.channels,
                actual: c,
            });
        }
        let cls_pre = self.cls_hidden.forward(v)?;
        let cls_act = relu_forward(&cls_pre);
        let reg_pre = self.reg_hidden.forward(v)?;
        let reg_act = relu_forward(&reg_pre);
        let outputs = HeadOutputs {
            cls: self.cls_out.forward(&cls_act)?,
            reg: self.reg_out.forward(&reg_act)?,
            ctr: self.ctr_out.forward(&reg_act)?,
        };
        Ok((
            outputs,
            HeadTrace {
                input: v.clone(),
                cls_pre,
                cls_act,
                reg_pre,
                reg_act,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. `V`.
    pub fn backward(&mut self, trace: &HeadTrace, grads: &HeadOutputs) -> Result<Tensor> {
        let g_cls_act = self.cls_out.backward(&trace.cls_act, &grads.cls)?;
        let mut g_reg_act = self.reg_out.backward(&trace.reg_act, &grads.reg)?;
        g_reg_act.add_assign(&self.ctr_out.backward(&trace.reg_act, &grads.ctr)?);
        let g_cls_pre = relu_backward(&trace.cls_pre, &g_cls_act)?;
        let g_reg_pre = relu_backward(&trace.reg_pre, &g_reg_act)?;
        let mut g_v = self.cls_hidden.backward(&trace.input, &g_cls_pre)?;
        g_v.add_assign(&self.reg_hidden.backward(&trace.input, &g_reg_pre)?);
        Ok(g_v)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.cls_hidden.visit_params(&format!("{prefix}.cls_hidden"), f);
        self.cls_out.visit_params(&format!("{prefix}.cls_out"), f);
        self.reg_hidden.visit_params(&format!("{prefix}.reg_hidden"), f);
        self.reg_out.visit_params(&format!("{prefix}.reg_out"), f);
        self.ctr_out.visit_params(&format!("{prefix}.ctr_out"), f);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.cls_hidden.visit_params_mut(&format!("{prefix}.cls_hidden"), f);
        self.cls_out.visit_params_mut(&format!("{prefix}.cls_out"), f);
        self.reg_hidden.visit_params_mut(&format!("{prefix}.reg_hidden"), f);
        self.reg_out.visit_params_mut(&format!("{prefix}.reg_out"), f);
        self.ctr_out.visit_params_mut(&format!("{prefix}.ctr_out"), f);
    }
}

/// Distances to start and end in frames: `exp(reg) · stride`, row 0 = left,
/// row 1 = right.
pub fn decode_offsets(reg: &Tensor, stride: usize) -> Result<Tensor> {
    let (rows, _) = reg.dims2("decode_offsets")?;
    if rows != 2 {
        return Err(Error::ShapeMismatch {
            op: "decode_offsets",
            axis: "rows",
            expected: 2,
            actual: rows,
        });
    }
    let mut out = reg.detached();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.exp() * stride as f64);
    Ok(out)
}
