//! The full detector: stem → SRFC block → predictor head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::head::{Head, HeadConfig, HeadOutputs, HeadTrace, Stem, StemConfig, StemInit, StemTrace};
use crate::srfc::{AttentionMap, Srfc, SrfcConfig, SrfcTrace, SrfcVariant};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Per-frame input feature width.
    pub in_dim: usize,
    /// Trunk width (stem output, SRFC, head towers).
    pub channels: usize,
    /// Frames per feature-map location; a power of two.
    pub stride: usize,
    pub n_classes: usize,
    pub variant: SrfcVariant,
    pub branch_kernel: usize,
    pub fuse_hidden: usize,
    pub fuse_kernel: usize,
    /// Standard deviation of the normal weight initialisation.
    pub init_std: f64,
    /// Stem convolutions may override `init_std`.
    pub stem_init: StemInit,
    /// Initial classifier foreground probability.
    pub prior: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_dim: 16,
            channels: 64,
            stride: 16,
            n_classes: 3,
            variant: SrfcVariant::Srf,
            branch_kernel: 3,
            fuse_hidden: 16,
            fuse_kernel: 3,
            init_std: 0.01,
            stem_init: StemInit::HeNormal,
            prior: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stem().validate()?;
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be positive".into()));
        }
        if self.fuse_hidden == 0 {
            return Err(Error::Config("fuse_hidden must be positive".into()));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(Error::Config("init_std must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn stem(&self) -> StemConfig {
        StemConfig {
            in_dim: self.in_dim,
            channels: self.channels,
            stride: self.stride,
            init: self.stem_init,
        }
    }

    pub fn srfc(&self) -> SrfcConfig {
        SrfcConfig {
            channels: self.channels,
            branch_kernel: self.branch_kernel,
            fuse_hidden: self.fuse_hidden,
            fuse_kernel: self.fuse_kernel,
            variant: self.variant,
        }
    }

    pub fn head(&self) -> HeadConfig {
        HeadConfig {
            channels: self.channels,
            hidden: self.channels,
            n_classes: self.n_classes,
            prior: self.prior,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub stem: Stem,
    pub srfc: Srfc,
    pub head: Head,
}

#[derive(Debug, Clone)]
pub struct ModelTrace {
    stem: StemTrace,
    srfc: SrfcTrace,
    head: HeadTrace,
}

impl ModelTrace {
    pub fn attention(&self) -> Option<&AttentionMap> {
        self.srfc.attention()
    }
}

impl Model {
    /// Deterministic initialisation from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = config.init_std;
        Ok(Model {
            stem: Stem::new(config.stem(), std, &mut rng)?,
            srfc: Srfc::new(config.srfc(), std, &mut rng)?,
            head: Head::new(config.head(), std, &mut rng)?,
            config,
        })
    }

    pub fn set_variant(&mut self, variant: SrfcVariant) {
        self.config.variant = variant;
        self.srfc.config.variant = variant;
    }

    pub fn forward(&self, features: &Tensor) -> Result<(HeadOutputs, ModelTrace)> {
        let (t_map, stem) = self.stem.forward(features)?;
        let (v, srfc) = self.srfc.forward(&t_map)?;
        let (out, head) = self.head.forward(&v)?;
        Ok((out, ModelTrace { stem, srfc, head }))
    }

    /// Accumulates gradients of every parameter given head-output gradients.
    pub fn backward(&mut self, trace: &ModelTrace, grads: &HeadOutputs) -> Result<()> {
        let g_v = self.head.backward(&trace.head, grads)?;
        let g_t = self.srfc.backward(&trace.srfc, &g_v)?;
        self.stem.backward(&trace.stem, &g_t)
    }

    /// Visits every learnable tensor with a stable dotted name, in a fixed order.
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.stem.visit_params("stem", f);
        self.srfc.visit_params("srfc", f);
        self.head.visit_params("head", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.stem.visit_params_mut("stem", f);
        self.srfc.visit_params_mut("srfc", f);
        self.head.visit_params_mut("head", f);
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, t| out.push((n, t)));
        out
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    pub fn zero_grads(&mut self) {
        self.visit_params_mut(&mut |_, t| {
            t.grad_mut();
            t.zero_grad();
        });
    }

    /// Global L2 norm over all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        let mut sq = 0.0;
        self.visit_params(&mut |_, t| {
            if let Some(g) = t.grad() {
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        });
        sq.sqrt()
    }

    /// Scales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let factor = max_norm / norm;
            self.visit_params_mut(&mut |_, t| {
                t.grad_mut().iter_mut().for_each(|g| *g *= factor);
            });
        }
        norm
    }

    /// Flattens all parameter values in visiting order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, t| out.extend_from_slice(t.data()));
        out
    }
}
