//! Focal classification loss, temporal IoU localisation loss, center-ness BCE,
//! and their normalised combination.

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus, Tensor};
use crate::error::{Error, Result};
use crate::head::HeadOutputs;
use crate::targets::LocationTargets;

/// Zero-length regression targets (a location exactly on an instance
/// boundary) are raised to this many frames so the log stays finite.
pub const MIN_TARGET_OFFSET: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the localisation term.
    pub lambda: f64,
    /// Weight of the center-ness term.
    pub beta: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            beta: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(self.focal_gamma >= 0.0) {
            return Err(Error::Config("focal gamma must be >= 0".into()));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(Error::Config("focal alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Binary focal loss of one logit against a 0/1 target, with its derivative
/// w.r.t. the logit.
pub fn focal_term(z: f64, positive: bool, gamma: f64, alpha: f64) -> (f64, f64) {
    let p = sigmoid(z);
    if positive {
        let log_p = -softplus(-z);
        let q = 1.0 - p;
        let w = q.powf(gamma);
        (-alpha * w * log_p, alpha * w * (gamma * p * log_p - q))
    } else {
        let log_q = -softplus(z);
        let w = p.powf(gamma);
        (
            -(1.0 - alpha) * w * log_q,
            (1.0 - alpha) * w * (p - gamma * (1.0 - p) * log_q),
        )
    }
}

/// Sum of per-class binary focal losses over every location. Class `k`
/// (row `k−1`) is the positive target where `labels[x] == k`.
pub fn focal_loss(logits: &Tensor, labels: &[usize], gamma: f64, alpha: f64) -> Result<(f64, Tensor)> {
    let (classes, len) = logits.dims2("focal_loss")?;
    if labels.len() != len {
        return Err(Error::ShapeMismatch {
            op: "focal_loss",
            axis: "locations",
            expected: len,
            actual: labels.len(),
        });
    }
    let mut grad = Tensor::zeros(&[classes, len]);
    let mut total = 0.0;
    for k in 0..classes {
        let row = logits.row(k);
        for x in 0..len {
            let (l, g) = focal_term(row[x], labels[x] == k + 1, gamma, alpha);
            total += l;
            grad.row_mut(k)[x] = g;
        }
    }
    Ok((total, grad))
}

/// `−ln(intersection / union)` for segments sharing an anchor point, with the
/// gradient w.r.t. the predicted `(l, r)`.
pub fn tiou_loss(pred: (f64, f64), target: (f64, f64)) -> Result<(f64, [f64; 2])> {
    let (l, r) = pred;
    let clamp = |v: f64| if v < MIN_TARGET_OFFSET { MIN_TARGET_OFFSET } else { v };
    let (lt, rt) = (clamp(target.0), clamp(target.1));
    if !(lt > 0.0 && rt > 0.0 && lt.is_finite() && rt.is_finite()) {
        return Err(Error::invalid(
            "tiou_loss",
            format!("target offsets ({}, {}) are not positive", target.0, target.1),
        ));
    }
    if !(l > 0.0 && r > 0.0) {
        return Err(Error::invalid(
            "tiou_loss",
            format!("predicted offsets ({l}, {r}) are not positive"),
        ));
    }
    let inter = l.min(lt) + r.min(rt);
    let union = lt + rt + l + r - inter;
    let loss = union.ln() - inter.ln();
    let d_inter_l = if l < lt { 1.0 } else { 0.0 };
    let d_inter_r = if r < rt { 1.0 } else { 0.0 };
    let grad = |d_inter: f64| -d_inter / inter + (1.0 - d_inter) / union;
    Ok((loss, [grad(d_inter_l), grad(d_inter_r)]))
}

/// Binary cross-entropy of `sigmoid(z)` against soft target `y`, in logit
/// space, with its derivative.
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    (softplus(z) - y * z, sigmoid(z) - y)
}

/// BCE summed over positive locations only.
pub fn centerness_loss(ctr_logits: &Tensor, targets: &LocationTargets) -> Result<(f64, Tensor)> {
    ctr_logits.expect_shape("centerness_loss", &[1, targets.len()])?;
    let mut grad = Tensor::zeros(&[1, targets.len()]);
    let mut total = 0.0;
    for (x, ctr) in targets.centerness.iter().enumerate() {
        if let (Some(y), true) = (ctr, targets.labels[x] > 0) {
            let (l, g) = bce_with_logits(ctr_logits.data()[x], *y);
            total += l;
            grad.data_mut()[x] = g;
        }
    }
    Ok((total, grad))
}

/// The three normalised loss terms and gradients w.r.t. the raw head outputs.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    /// Σ focal / N_pos.
    pub cls: f64,
    /// Σ tIoU / N_pos (before λ).
    pub loc: f64,
    /// Σ BCE / N_pos (before β).
    pub ctr: f64,
    pub n_positive: usize,
    pub grads: HeadOutputs,
}

/// `(Σ focal + λ Σ⁺ tIoU + β Σ⁺ BCE) / max(N_pos, 1)` where `Σ⁺` runs over
/// positive locations. Offsets are decoded as `exp(reg) · stride`.
pub fn total_loss(
    outputs: &HeadOutputs,
    targets: &LocationTargets,
    stride: usize,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let len = outputs.len();
    if targets.len() != len {
        return Err(Error::ShapeMismatch {
            op: "total_loss",
            axis: "locations",
            expected: len,
            actual: targets.len(),
        });
    }
    let n_pos = targets.n_positive();
    let norm = 1.0 / n_pos.max(1) as f64;
    let mut grads = outputs.zeros_like();

    let (cls_sum, mut g_cls) =
        focal_loss(&outputs.cls, &targets.labels, config.focal_gamma, config.focal_alpha)?;
    g_cls.scale(norm);
    grads.cls = g_cls;

    let s = stride as f64;
    let mut loc_sum = 0.0;
    for x in 0..len {
        let Some(t_star) = targets.offsets[x].filter(|_| targets.labels[x] > 0) else {
            continue;
        };
        let l = outputs.reg.get2(0, x).exp() * s;
        let r = outputs.reg.get2(1, x).exp() * s;
        let (loss, [gl, gr]) = tiou_loss((l, r), t_star)?;
        loc_sum += loss;
        let w = config.lambda * norm;
        grads.reg.row_mut(0)[x] = w * gl * l;
        grads.reg.row_mut(1)[x] = w * gr * r;
    }

    let (ctr_sum, mut g_ctr) = centerness_loss(&outputs.ctr, targets)?;
    g_ctr.scale(config.beta * norm);
    grads.ctr = g_ctr;

    let (cls, loc, ctr) = (cls_sum * norm, loc_sum * norm, ctr_sum * norm);
    Ok(LossBreakdown {
        total: cls + config.lambda * loc + config.beta * ctr,
        cls,
        loc,
        ctr,
        n_positive: n_pos,
        grads,
    })
}
