use serde::{Deserialize, Serialize};

use super::config::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};
use crate::model::Model;

/// Per-parameter moment buffers, in the model's visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    /// Number of updates applied so far.
    pub step: u64,
    /// Adam first moment, or SGD velocity.
    pub first: Vec<Vec<f64>>,
    /// Adam second moment; empty for SGD.
    pub second: Vec<Vec<f64>>,
    coeffs: Coefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Coefficients {
    momentum: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Optimizer {
    pub fn new(config: &TrainConfig, model: &Model) -> Self {
        let mut sizes = Vec::new();
        model.visit_params(&mut |_, t| sizes.push(t.numel()));
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Optimizer {
            kind: config.optimizer,
            step: 0,
            first: zeros(),
            second: match config.optimizer {
                OptimizerKind::Adam => zeros(),
                OptimizerKind::SgdMomentum => Vec::new(),
            },
            coeffs: Coefficients {
                momentum: config.momentum,
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: config.adam_eps,
            },
        }
    }

    /// Rebuilds an optimizer from saved buffers, checking them against `model`.
    pub fn restore(
        config: &TrainConfig,
        model: &Model,
        step: u64,
        first: Vec<Vec<f64>>,
        second: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut opt = Optimizer::new(config, model);
        let check = |name: &str, want: &[Vec<f64>], got: &[Vec<f64>]| {
            let ok = want.len() == got.len()
                && want.iter().zip(got).all(|(a, b)| a.len() == b.len());
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(
                    "optimizer_restore",
                    format!("{name} buffers do not match the model's parameters"),
                ))
            }
        };
        check("first-moment", &opt.first, &first)?;
        check("second-moment", &opt.second, &second)?;
        opt.step = step;
        opt.first = first;
        opt.second = second;
        Ok(opt)
    }

    /// Applies one update using the gradients currently held by `model`.
    pub fn apply(&mut self, model: &mut Model, lr: f64) {
        self.step += 1;
        let Coefficients { momentum, beta1, beta2, eps } = self.coeffs;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let kind = self.kind;
        let (first, second) = (&mut self.first, &mut self.second);
        let mut i = 0;
        model.visit_params_mut(&mut |_, p| {
            let g = p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]);
            let m = &mut first[i];
            match kind {
                OptimizerKind::Adam => {
                    let v = &mut second[i];
                    for (j, w) in p.data_mut().iter_mut().enumerate() {
                        m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                        v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    for (j, w) in p.data_mut().iter_mut().enumerate() {
                        m[j] = momentum * m[j] + g[j];
                        *w -= lr * m[j];
                    }
                }
            }
            i += 1;
        });
    }
}
