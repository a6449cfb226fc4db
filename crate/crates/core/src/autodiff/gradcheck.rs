//! Central finite-difference verification of backward kernels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_EPSILON: f64 = 1e-5;

/// A differentiable map from a list of tensors to one tensor.
pub trait DifferentiableOp {
    fn name(&self) -> &str;

    fn forward(&self, inputs: &[Tensor]) -> Result<Tensor>;

    /// Gradients w.r.t. every input, given the upstream gradient of the output.
    fn backward(&self, inputs: &[Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>>;
}

/// `|analytic − numeric| / max(1, |analytic|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Checks `op` on standard-normal inputs of the given shapes.
///
/// The output is reduced to a scalar through a fixed random linear functional
/// `u`, so the analytic gradient is `backward(inputs, u)`. Returns the largest
/// relative error over every input element.
pub fn grad_check(op: &dyn DifferentiableOp, input_shapes: &[&[usize]], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|s| Tensor::randn(s, 1.0, &mut rng))
        .collect();
    grad_check_at(op, inputs, seed.wrapping_add(0x9e37_79b9))
}

/// Like [`grad_check`] at caller-chosen input values.
pub fn grad_check_at(op: &dyn DifferentiableOp, inputs: Vec<Tensor>, seed: u64) -> Result<f64> {
    let name = op.name().to_string();
    let out = op.forward(&inputs)?;
    ensure_finite(&name, &out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functional = Tensor::randn(out.shape(), 1.0, &mut rng);
    let analytic = op.backward(&inputs, &functional)?;
    if analytic.len() != inputs.len() {
        return Err(Error::invalid(
            "grad_check",
            format!(
                "{name}: backward returned {} gradients for {} inputs",
                analytic.len(),
                inputs.len()
            ),
        ));
    }
    for g in &analytic {
        ensure_finite(&name, g)?;
    }
    let scalar = |xs: &[Tensor]| -> Result<f64> {
        let y = op.forward(xs)?;
        ensure_finite(&name, &y)?;
        Ok(y.data().iter().zip(functional.data()).map(|(a, b)| a * b).sum())
    };
    finite_difference_error(&name, inputs, scalar, &analytic)
}

/// Largest relative error between `analytic` and central differences of `f`.
pub fn finite_difference_error<F>(
    name: &str,
    mut inputs: Vec<Tensor>,
    mut f: F,
    analytic: &[Tensor],
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        for idx in 0..inputs[k].numel() {
            let orig = inputs[k].data()[idx];
            inputs[k].data_mut()[idx] = orig + FD_EPSILON;
            let plus = f(&inputs)?;
            inputs[k].data_mut()[idx] = orig - FD_EPSILON;
            let minus = f(&inputs)?;
            inputs[k].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * FD_EPSILON);
            if !numeric.is_finite() {
                return Err(Error::NonFinite { op: name.to_string() });
            }
            worst = worst.max(relative_error(analytic[k].data()[idx], numeric));
        }
    }
    Ok(worst)
}

fn ensure_finite(name: &str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op: name.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;

    impl DifferentiableOp for Identity {
        fn name(&self) -> &str {
            "identity"
        }
        fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
            Ok(inputs[0].detached())
        }
        fn backward(&self, _: &[Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
            Ok(vec![grad_out.detached()])
        }
    }

    /// Square with a deliberately wrong factor in the backward pass.
    struct BrokenSquare;

    impl DifferentiableOp for BrokenSquare {
        fn name(&self) -> &str {
            "broken_square"
        }
        fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
            let mut y = inputs[0].detached();
            y.data_mut().iter_mut().for_each(|v| *v *= *v);
            Ok(y)
        }
        fn backward(&self, inputs: &[Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
            let mut g = grad_out.detached();
            for (gv, x) in g.data_mut().iter_mut().zip(inputs[0].data()) {
                *gv *= 3.0 * x;
            }
            Ok(vec![g])
        }
    }

    struct Exploding;

    impl DifferentiableOp for Exploding {
        fn name(&self) -> &str {
            "exploding"
        }
        fn forward(&self, inputs: &[Tensor]) -> Result<Tensor> {
            let mut y = inputs[0].detached();
            y.data_mut().iter_mut().for_each(|v| *v = f64::NAN);
            Ok(y)
        }
        fn backward(&self, _: &[Tensor], grad_out: &Tensor) -> Result<Vec<Tensor>> {
            Ok(vec![grad_out.detached()])
        }
    }

    #[test]
    fn identity_is_exact() {
        let err = grad_check(&Identity, &[&[3, 5]], 1).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let err = grad_check(&BrokenSquare, &[&[2, 8]], 7).unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn non_finite_names_the_op() {
        let err = grad_check(&Exploding, &[&[2]], 0).unwrap_err();
        assert!(err.to_string().contains("exploding"), "{err}");
    }
}
