use super::Tensor;
use crate::error::{Error, Result};

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.detached();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Passes the gradient where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("relu grad_out", x.shape())?;
    let mut g = grad_out.detached();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid_forward(x: &Tensor) -> Tensor {
    let mut out = x.detached();
    out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    out
}

/// Backward from the saved forward output `y = σ(x)`.
pub fn sigmoid_backward(y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("sigmoid grad_out", y.shape())?;
    let mut g = grad_out.detached();
    for (gv, &s) in g.data_mut().iter_mut().zip(y.data()) {
        *gv *= s * (1.0 - s);
    }
    Ok(g)
}

/// Softmax over the channel axis of an `N × T` tensor, independently per column.
pub fn softmax_channels_forward(z: &Tensor) -> Result<Tensor> {
    let (n, len) = z.dims2("softmax_channels")?;
    if n < 2 {
        return Err(Error::invalid(
            "softmax_channels",
            format!("need at least 2 channels, got {n}"),
        ));
    }
    let mut out = Tensor::zeros(&[n, len]);
    let src = z.data();
    let dst = out.data_mut();
    for x in 0..len {
        let max = (0..n).map(|c| src[c * len + x]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..n {
            let e = (src[c * len + x] - max).exp();
            dst[c * len + x] = e;
            sum += e;
        }
        for c in 0..n {
            dst[c * len + x] /= sum;
        }
    }
    Ok(out)
}

/// Jacobian-vector product of the column softmax, from its saved output `m`:
/// `dz_c = m_c · (g_c − Σ_k m_k g_k)`.
pub fn softmax_channels_backward(m: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, len) = m.dims2("softmax_channels")?;
    grad_out.expect_shape("softmax_channels grad_out", &[n, len])?;
    let mut dz = Tensor::zeros(&[n, len]);
    let (mv, gv) = (m.data(), grad_out.data());
    let out = dz.data_mut();
    for x in 0..len {
        let dot: f64 = (0..n).map(|c| mv[c * len + x] * gv[c * len + x]).sum();
        for c in 0..n {
            let i = c * len + x;
            out[i] = mv[i] * (gv[i] - dot);
        }
    }
    Ok(dz)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::full(&[3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_identity_on_positive() {
        let x = Tensor::new(vec![1, 3], vec![0.5, 1.0, 9.0]).unwrap();
        assert_eq!(relu_forward(&x), x);
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        let lo = sigmoid(-500.0);
        assert!((0.0..1e-200).contains(&lo));
        assert_eq!(sigmoid(500.0), 1.0);
        assert!(softplus(-500.0).is_finite() && softplus(500.0) == 500.0);
    }

    #[test]
    fn softmax_fixtures() {
        let z = Tensor::from_rows(&[
            vec![0.0, 2f64.ln()],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let m = softmax_channels_forward(&z).unwrap();
        for c in 0..3 {
            assert!((m.get2(c, 0) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((m.get2(0, 1) - 0.5).abs() < 1e-15);
        assert!((m.get2(1, 1) - 0.25).abs() < 1e-15);
        assert!((m.get2(2, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_needs_two_channels() {
        assert!(softmax_channels_forward(&Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let z = Tensor::from_rows(&[vec![1000.0], vec![-1000.0]]).unwrap();
        let m = softmax_channels_forward(&z).unwrap();
        assert_eq!(m.data(), &[1.0, 0.0]);
    }
}
