//! Dilated 1D convolution with "same" zero padding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        dilation: usize,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::invalid("conv1d", "channel counts must be positive"));
        }
        if kernel_size == 0 || kernel_size.is_multiple_of(2) {
            return Err(Error::invalid(
                "conv1d",
                format!("kernel size {kernel_size} must be odd"),
            ));
        }
        if dilation == 0 {
            return Err(Error::invalid("conv1d", "dilation must be >= 1"));
        }
        Ok(ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            dilation,
        })
    }

    /// Zero padding on each side that keeps the temporal length unchanged.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.out_channels, self.in_channels, self.kernel_size]
    }

    /// Offset of tap `j` relative to the output position.
    fn tap_offset(&self, j: usize) -> isize {
        (j * self.dilation) as isize - self.padding() as isize
    }

    fn check(&self, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<usize> {
        let (c_in, len) = input.dims2("conv1d")?;
        if c_in != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                axis: "input channels",
                expected: self.in_channels,
                actual: c_in,
            });
        }
        weight.expect_shape("conv1d weight", &self.weight_shape())?;
        bias.expect_shape("conv1d bias", &[self.out_channels])?;
        Ok(len)
    }
}

/// Valid output range `[lo, hi)` for a tap at `offset` over a length-`len` signal.
#[inline]
fn valid_range(offset: isize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// `out[o][x] = bias[o] + Σ_{i,j} weight[o][i][j] · input[i][x + j·r − pad]`
pub fn conv1d_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<Tensor> {
    let len = spec.check(input, weight, bias)?;
    let k = spec.kernel_size;
    let mut out = Tensor::zeros(&[spec.out_channels, len]);
    let w = weight.data();
    for o in 0..spec.out_channels {
        let out_row = out.row_mut(o);
        out_row.iter_mut().for_each(|v| *v = bias.data()[o]);
        for i in 0..spec.in_channels {
            let in_row = input.row(i);
            for j in 0..k {
                let wv = w[(o * spec.in_channels + i) * k + j];
                if wv == 0.0 {
                    continue;
                }
                let off = spec.tap_offset(j);
                let (lo, hi) = valid_range(off, len);
                if lo >= hi {
                    continue;
                }
                let src = &in_row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                for (y, &xv) in out_row[lo..hi].iter_mut().zip(src) {
                    *y += wv * xv;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Adjoint of [`conv1d_forward`]. Returns fresh gradient tensors.
pub fn conv1d_backward(
    grad_out: &Tensor,
    saved_input: Option<&Tensor>,
    spec: &ConvSpec,
    weight: &Tensor,
) -> Result<ConvGrads> {
    let input = saved_input.ok_or(Error::MissingContext { op: "conv1d" })?;
    let bias_shape = Tensor::zeros(&[spec.out_channels]);
    let len = spec.check(input, weight, &bias_shape)?;
    grad_out.expect_shape("conv1d grad_out", &[spec.out_channels, len])?;

    let k = spec.kernel_size;
    let mut g_in = Tensor::zeros(&[spec.in_channels, len]);
    let mut g_w = Tensor::zeros(&spec.weight_shape());
    let mut g_b = Tensor::zeros(&[spec.out_channels]);
    let w = weight.data();

    for o in 0..spec.out_channels {
        let go = grad_out.row(o);
        g_b.data_mut()[o] = go.iter().sum();
        for i in 0..spec.in_channels {
            let in_row = input.row(i);
            for j in 0..k {
                let off = spec.tap_offset(j);
                let (lo, hi) = valid_range(off, len);
                if lo >= hi {
                    continue;
                }
                let src = (lo as isize + off) as usize..(hi as isize + off) as usize;
                let idx = (o * spec.in_channels + i) * k + j;
                g_w.data_mut()[idx] = go[lo..hi]
                    .iter()
                    .zip(&in_row[src.clone()])
                    .map(|(a, b)| a * b)
                    .sum();
                let wv = w[idx];
                if wv != 0.0 {
                    let gi = &mut g_in.row_mut(i)[src];
                    for (d, &g) in gi.iter_mut().zip(&go[lo..hi]) {
                        *d += wv * g;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: g_in,
        weight: g_w,
        bias: g_b,
    })
}

/// A convolution layer owning its weight and bias parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    pub fn zeros(spec: ConvSpec) -> Self {
        Conv1d {
            weight: Tensor::zeros(&spec.weight_shape()),
            bias: Tensor::zeros(&[spec.out_channels]),
            spec,
        }
    }

    /// Weights from N(0, std²), bias set to `bias`.
    pub fn normal<R: Rng + ?Sized>(spec: ConvSpec, std: f64, bias: f64, rng: &mut R) -> Self {
        Conv1d {
            weight: Tensor::randn(&spec.weight_shape(), std, rng),
            bias: Tensor::full(&[spec.out_channels], bias),
            spec,
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv1d_forward(input, &self.spec, &self.weight, &self.bias)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let grads = conv1d_backward(grad_out, Some(input), &self.spec, &self.weight)?;
        self.weight.accumulate_grad(grads.weight.data());
        self.bias.accumulate_grad(grads.bias.data());
        Ok(grads.input)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn single(input: &[f64], kernel: &[f64], dilation: usize) -> Vec<f64> {
        let spec = ConvSpec::new(1, 1, kernel.len(), dilation).unwrap();
        let x = Tensor::new(vec![1, input.len()], input.to_vec()).unwrap();
        let w = Tensor::new(vec![1, 1, kernel.len()], kernel.to_vec()).unwrap();
        conv1d_forward(&x, &spec, &w, &Tensor::zeros(&[1]))
            .unwrap()
            .into_data()
    }

    #[test]
    fn identity_kernel() {
        assert_eq!(single(&[1.0, 2.0, 3.0], &[1.0], 1), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn box_kernel_same_padding() {
        assert_eq!(single(&[1.0, 2.0, 3.0], &[1.0; 3], 1), vec![3.0, 6.0, 5.0]);
    }

    /// Direct evaluation over an explicitly zero-padded copy of the input.
    fn naive(input: &[f64], kernel: &[f64], dilation: usize) -> Vec<f64> {
        let pad = dilation * (kernel.len() - 1) / 2;
        let mut padded = vec![0.0; pad];
        padded.extend_from_slice(input);
        padded.extend(std::iter::repeat_n(0.0, pad));
        (0..input.len())
            .map(|x| {
                kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * padded[x + j * dilation])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn dilated_box_kernel() {
        let input = [1.0, 0.0, 0.0, 0.0, 1.0];
        let expected = naive(&input, &[1.0; 3], 2);
        // taps at x-2, x, x+2: odd positions only ever see zeros
        assert_eq!(expected, vec![1.0, 0.0, 2.0, 0.0, 1.0]);
        assert_eq!(single(&input, &[1.0; 3], 2), expected);
    }

    #[test]
    fn matches_naive_oracle_on_random_kernels() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for dilation in [1, 2, 3, 5, 9] {
            let x = Tensor::randn(&[1, 12], 1.0, &mut rng);
            let k = Tensor::randn(&[1, 1, 5], 1.0, &mut rng);
            let got = single(x.data(), k.data(), dilation);
            let want = naive(x.data(), k.data(), dilation);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dilation_wider_than_signal_only_keeps_centre_tap() {
        assert_eq!(single(&[1.0, 2.0], &[5.0, 1.0, 7.0], 5), vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_even_kernel_and_zero_dilation() {
        assert!(ConvSpec::new(1, 1, 2, 1).is_err());
        assert!(ConvSpec::new(1, 1, 3, 0).is_err());
    }

    #[test]
    fn channel_mismatch_names_axis() {
        let spec = ConvSpec::new(2, 1, 3, 1).unwrap();
        let err = conv1d_forward(
            &Tensor::zeros(&[3, 4]),
            &spec,
            &Tensor::zeros(&[1, 2, 3]),
            &Tensor::zeros(&[1]),
        )
        .unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn backward_without_context_errors() {
        let spec = ConvSpec::new(1, 1, 3, 1).unwrap();
        let err = conv1d_backward(&Tensor::zeros(&[1, 4]), None, &spec, &Tensor::zeros(&[1, 1, 3]));
        assert!(matches!(err, Err(Error::MissingContext { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(3, 2, 3, 3).unwrap();
        let x = Tensor::randn(&[3, 10], 1.0, &mut rng);
        let w = Tensor::randn(&spec.weight_shape(), 1.0, &mut rng);
        let g = conv1d_backward(&Tensor::zeros(&[2, 10]), Some(&x), &spec, &w).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_kernel_backward_passes_grad_through() {
        let spec = ConvSpec::new(1, 1, 1, 4).unwrap();
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let go = Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let g = conv1d_backward(&go, Some(&x), &spec, &w).unwrap();
        assert_eq!(g.input, go);
    }

    #[test]
    fn layer_backward_accumulates() {
        let spec = ConvSpec::new(1, 1, 3, 1).unwrap();
        let mut layer = Conv1d::zeros(spec);
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let go = Tensor::full(&[1, 3], 1.0);
        layer.backward(&x, &go).unwrap();
        layer.backward(&x, &go).unwrap();
        assert_eq!(layer.bias.grad().unwrap(), &[6.0]);
        // centre tap sees every input once per call
        assert_eq!(layer.weight.grad().unwrap()[1], 12.0);
    }

}
