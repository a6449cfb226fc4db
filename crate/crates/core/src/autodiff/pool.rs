use super::Tensor;
use crate::error::{Error, Result};

/// Average and max over the channel axis of a `C × T` map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPool {
    pub avg: Tensor,
    pub max: Tensor,
    /// Channel that produced each column's max (lowest index on ties).
    pub argmax: Vec<usize>,
}

pub fn channel_pool_forward(f: &Tensor) -> Result<ChannelPool> {
    let (c, len) = f.dims2("channel_pool")?;
    let mut avg = Tensor::zeros(&[1, len]);
    let mut max = Tensor::full(&[1, len], f64::NEG_INFINITY);
    let mut argmax = vec![0usize; len];
    for ch in 0..c {
        let row = f.row(ch);
        for (x, &v) in row.iter().enumerate() {
            avg.data_mut()[x] += v;
            if v > max.data()[x] {
                max.data_mut()[x] = v;
                argmax[x] = ch;
            }
        }
    }
    avg.scale(1.0 / c as f64);
    Ok(ChannelPool { avg, max, argmax })
}

/// Gradient w.r.t. the pooled map given upstream gradients for the two outputs.
pub fn channel_pool_backward(
    pool: &ChannelPool,
    channels: usize,
    grad_avg: &Tensor,
    grad_max: &Tensor,
) -> Result<Tensor> {
    let len = pool.argmax.len();
    grad_avg.expect_shape("channel_pool grad_avg", &[1, len])?;
    grad_max.expect_shape("channel_pool grad_max", &[1, len])?;
    let mut g = Tensor::zeros(&[channels, len]);
    let inv = 1.0 / channels as f64;
    for ch in 0..channels {
        let row = g.row_mut(ch);
        for (x, v) in row.iter_mut().enumerate() {
            *v = grad_avg.data()[x] * inv;
        }
    }
    for (x, &ch) in pool.argmax.iter().enumerate() {
        g.row_mut(ch)[x] += grad_max.data()[x];
    }
    Ok(g)
}

/// Max pooling along time. Output length is `ceil(T / stride)`; the trailing
/// window may be partial.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalMaxPool {
    pub output: Tensor,
    /// Flat input index of each output's maximum (first occurrence on ties).
    pub argmax: Vec<usize>,
    pub input_shape: [usize; 2],
}

pub fn temporal_maxpool_forward(x: &Tensor, window: usize, stride: usize) -> Result<TemporalMaxPool> {
    let (c, len) = x.dims2("temporal_maxpool")?;
    if window == 0 || stride == 0 {
        return Err(Error::invalid(
            "temporal_maxpool",
            "window and stride must be >= 1",
        ));
    }
    if len < window {
        return Err(Error::invalid(
            "temporal_maxpool",
            format!("input length {len} is shorter than window {window}"),
        ));
    }
    let out_len = len.div_ceil(stride);
    let mut output = Tensor::zeros(&[c, out_len]);
    let mut argmax = vec![0usize; c * out_len];
    for ch in 0..c {
        let row = x.row(ch);
        for o in 0..out_len {
            let start = o * stride;
            let end = (start + window).min(len);
            let mut best = start;
            for t in start + 1..end {
                if row[t] > row[best] {
                    best = t;
                }
            }
            output.row_mut(ch)[o] = row[best];
            argmax[ch * out_len + o] = ch * len + best;
        }
    }
    Ok(TemporalMaxPool {
        output,
        argmax,
        input_shape: [c, len],
    })
}

pub fn temporal_maxpool_backward(pool: &TemporalMaxPool, grad_out: &Tensor) -> Result<Tensor> {
    grad_out.expect_shape("temporal_maxpool grad_out", pool.output.shape())?;
    let mut g = Tensor::zeros(&pool.input_shape);
    let gd = g.data_mut();
    for (&src, &go) in pool.argmax.iter().zip(grad_out.data()) {
        gd[src] += go;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_pool_fixture() {
        let f = Tensor::from_rows(&[vec![1.0, 4.0], vec![3.0, 2.0]]).unwrap();
        let p = channel_pool_forward(&f).unwrap();
        assert_eq!(p.avg.data(), &[2.0, 3.0]);
        assert_eq!(p.max.data(), &[3.0, 4.0]);
    }

    #[test]
    fn single_channel_pool_is_identity() {
        let f = Tensor::from_rows(&[vec![1.5, -2.0, 0.25]]).unwrap();
        let p = channel_pool_forward(&f).unwrap();
        assert_eq!(p.avg, f);
        assert_eq!(p.max, f);
    }

    #[test]
    fn constant_pool() {
        let f = Tensor::full(&[4, 3], 2.5);
        let p = channel_pool_forward(&f).unwrap();
        assert!(p.avg.data().iter().all(|&v| v == 2.5));
        assert!(p.max.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn max_ties_route_to_lowest_channel() {
        let f = Tensor::full(&[3, 1], 1.0);
        let p = channel_pool_forward(&f).unwrap();
        let g = channel_pool_backward(
            &p,
            3,
            &Tensor::zeros(&[1, 1]),
            &Tensor::full(&[1, 1], 1.0),
        )
        .unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_fixtures() {
        let x = Tensor::from_rows(&[vec![1.0, 3.0, 2.0, 5.0]]).unwrap();
        let p = temporal_maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[3.0, 5.0]);
        let id = temporal_maxpool_forward(&x, 1, 1).unwrap();
        assert_eq!(id.output, x);
    }

    #[test]
    fn maxpool_partial_tail_and_short_input() {
        let x = Tensor::from_rows(&[vec![1.0, 3.0, 7.0]]).unwrap();
        let p = temporal_maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[3.0, 7.0]);
        assert!(temporal_maxpool_forward(&x, 4, 2).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let x = Tensor::from_rows(&[vec![2.0, 2.0]]).unwrap();
        let p = temporal_maxpool_forward(&x, 2, 2).unwrap();
        let g = temporal_maxpool_backward(&p, &Tensor::full(&[1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0]);
    }
}
