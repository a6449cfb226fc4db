//! Selective receptive-field convolution block.
//!
//! Three dilated convolutions (dilations 1, 3, 5) look at the same input
//! ("split"). Per temporal location their outputs are summarised by channel
//! average and max pooling, and a small two-layer convolution turns the six
//! summaries into three logits ("fuse"). A softmax over those logits weighs
//! the branches location by location ("select"), which lets each location
//! pick its own effective receptive field.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    channel_pool_backward, channel_pool_forward, relu_backward, relu_forward,
    softmax_channels_backward, softmax_channels_forward, ChannelPool, Conv1d, ConvSpec, Tensor,
};
use crate::error::{Error, Result};

pub const N_BRANCHES: usize = 3;

/// Dilation of the `n`-th branch, counting from 1: `2n − 1`.
pub fn dilation_rate(n: usize) -> usize {
    assert!((1..=N_BRANCHES).contains(&n), "branch index {n} out of range");
    2 * n - 1
}

/// Branch combinations compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrfcVariant {
    /// Standard convolution only (dilation 1).
    C0Only,
    /// Dilation-3 branch only.
    C1Only,
    /// Dilation-5 branch only.
    C2Only,
    /// Unweighted sum of all three branches.
    Sum,
    /// Attention-weighted selection over all three branches.
    Srf,
}

impl SrfcVariant {
    pub const ALL: [SrfcVariant; 5] = [
        SrfcVariant::C0Only,
        SrfcVariant::C1Only,
        SrfcVariant::C2Only,
        SrfcVariant::Sum,
        SrfcVariant::Srf,
    ];

    /// Ablation-table column letter, `a` through `e`.
    pub fn column(self) -> char {
        match self {
            SrfcVariant::C0Only => 'a',
            SrfcVariant::C1Only => 'b',
            SrfcVariant::C2Only => 'c',
            SrfcVariant::Sum => 'd',
            SrfcVariant::Srf => 'e',
        }
    }

    /// Zero-based indices of the branches this variant evaluates.
    pub fn branches(self) -> &'static [usize] {
        match self {
            SrfcVariant::C0Only => &[0],
            SrfcVariant::C1Only => &[1],
            SrfcVariant::C2Only => &[2],
            SrfcVariant::Sum | SrfcVariant::Srf => &[0, 1, 2],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SrfcVariant::C0Only => "c0_only",
            SrfcVariant::C1Only => "c1_only",
            SrfcVariant::C2Only => "c2_only",
            SrfcVariant::Sum => "sum",
            SrfcVariant::Srf => "srf",
        }
    }
}

impl fmt::Display for SrfcVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SrfcVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SrfcVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s || v.column().to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown SRFC variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrfcConfig {
    pub channels: usize,
    pub branch_kernel: usize,
    pub fuse_hidden: usize,
    pub fuse_kernel: usize,
    pub variant: SrfcVariant,
}

impl Default for SrfcConfig {
    fn default() -> Self {
        SrfcConfig {
            channels: 64,
            branch_kernel: 3,
            fuse_hidden: 16,
            fuse_kernel: 3,
            variant: SrfcVariant::Srf,
        }
    }
}

/// Per-location softmax weights over the three branches, `3 × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap(Tensor);

impl AttentionMap {
    pub const COLUMN_SUM_TOLERANCE: f64 = 1e-9;

    /// Wraps `m` after checking shape, range, and column normalisation.
    pub fn new(m: Tensor) -> Result<Self> {
        let (n, len) = m.dims2("attention_map")?;
        if n != N_BRANCHES {
            return Err(Error::ShapeMismatch {
                op: "attention_map",
                axis: "branches",
                expected: N_BRANCHES,
                actual: n,
            });
        }
        for x in 0..len {
            let mut sum = 0.0;
            for b in 0..n {
                let v = m.get2(b, x);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(
                        "attention_map",
                        format!("weight {v} at ({b}, {x}) outside [0, 1]"),
                    ));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > Self::COLUMN_SUM_TOLERANCE {
                return Err(Error::invalid(
                    "attention_map",
                    format!("column {x} sums to {sum}"),
                ));
            }
        }
        Ok(AttentionMap(m))
    }

    pub fn weights(&self) -> &Tensor {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(m1, m2, m3)` at location `x`.
    pub fn column(&self, x: usize) -> [f64; N_BRANCHES] {
        [self.0.get2(0, x), self.0.get2(1, x), self.0.get2(2, x)]
    }

    /// CSV with header `location_index,m1,m2,m3`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("location_index,m1,m2,m3\n");
        for x in 0..self.len() {
            let [a, b, c] = self.column(x);
            out.push_str(&format!("{x},{a},{b},{c}\n"));
        }
        out
    }
}

/// Intermediates of the fuse step.
#[derive(Debug, Clone)]
pub struct FuseTrace {
    pools: Vec<ChannelPool>,
    descriptor: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    pub attention: AttentionMap,
}

impl FuseTrace {
    /// The 6 × T descriptor `[avg(F1); max(F1); avg(F2); …]`.
    pub fn descriptor(&self) -> &Tensor {
        &self.descriptor
    }
}

/// Saved forward state for [`Srfc::backward`].
#[derive(Debug, Clone)]
pub struct SrfcTrace {
    input: Tensor,
    /// Branch outputs, `None` for branches the variant skips.
    branches: [Option<Tensor>; N_BRANCHES],
    fuse: Option<FuseTrace>,
}

impl SrfcTrace {
    pub fn attention(&self) -> Option<&AttentionMap> {
        self.fuse.as_ref().map(|f| &f.attention)
    }

    pub fn branch(&self, n: usize) -> Option<&Tensor> {
        self.branches[n].as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Srfc {
    pub config: SrfcConfig,
    pub branches: [Conv1d; N_BRANCHES],
    pub fuse_reduce: Conv1d,
    pub fuse_expand: Conv1d,
}

impl Srfc {
    /// All weights from N(0, std²), all biases zero.
    pub fn new<R: Rng + ?Sized>(config: SrfcConfig, std: f64, rng: &mut R) -> Result<Self> {
        let c = config.channels;
        let branch = |n: usize, rng: &mut R| -> Result<Conv1d> {
            let spec = ConvSpec::new(c, c, config.branch_kernel, dilation_rate(n))?;
            Ok(Conv1d::normal(spec, std, 0.0, rng))
        };
        let branches = [branch(1, rng)?, branch(2, rng)?, branch(3, rng)?];
        let reduce = ConvSpec::new(2 * N_BRANCHES, config.fuse_hidden, config.fuse_kernel, 1)?;
        let expand = ConvSpec::new(config.fuse_hidden, N_BRANCHES, config.fuse_kernel, 1)?;
        Ok(Srfc {
            config,
            branches,
            fuse_reduce: Conv1d::normal(reduce, std, 0.0, rng),
            fuse_expand: Conv1d::normal(expand, std, 0.0, rng),
        })
    }

    pub fn variant(&self) -> SrfcVariant {
        self.config.variant
    }

    /// Runs all three dilated branches on `input`.
    pub fn split(&self, input: &Tensor) -> Result<[Tensor; N_BRANCHES]> {
        self.check_input(input)?;
        Ok([
            self.branches[0].forward(input)?,
            self.branches[1].forward(input)?,
            self.branches[2].forward(input)?,
        ])
    }

    /// Attention over the three branch outputs.
    pub fn fuse(&self, features: [&Tensor; N_BRANCHES]) -> Result<FuseTrace> {
        let shape = features[0].shape();
        let (_, len) = features[0].dims2("srfc fuse")?;
        for f in &features[1..] {
            f.expect_shape("srfc fuse", shape)?;
        }
        let pools = features
            .iter()
            .map(|f| channel_pool_forward(f))
            .collect::<Result<Vec<_>>>()?;
        let mut descriptor = Tensor::zeros(&[2 * N_BRANCHES, len]);
        for (n, p) in pools.iter().enumerate() {
            descriptor.row_mut(2 * n).copy_from_slice(p.avg.data());
            descriptor.row_mut(2 * n + 1).copy_from_slice(p.max.data());
        }
        let hidden_pre = self.fuse_reduce.forward(&descriptor)?;
        let hidden = relu_forward(&hidden_pre);
        let logits = self.fuse_expand.forward(&hidden)?;
        let attention = AttentionMap::new(softmax_channels_forward(&logits)?)?;
        Ok(FuseTrace {
            pools,
            descriptor,
            hidden_pre,
            hidden,
            attention,
        })
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, SrfcTrace)> {
        self.check_input(input)?;
        let mut branches: [Option<Tensor>; N_BRANCHES] = Default::default();
        for &n in self.variant().branches() {
            branches[n] = Some(self.branches[n].forward(input)?);
        }
        let (out, fuse) = match self.variant() {
            SrfcVariant::C0Only | SrfcVariant::C1Only | SrfcVariant::C2Only => {
                let n = self.variant().branches()[0];
                (branches[n].clone().expect("branch evaluated"), None)
            }
            SrfcVariant::Sum => {
                let mut sum = branches[0].clone().expect("branch evaluated");
                sum.add_assign(branches[1].as_ref().expect("branch evaluated"));
                sum.add_assign(branches[2].as_ref().expect("branch evaluated"));
                (sum, None)
            }
            SrfcVariant::Srf => {
                let f = all_branches(&branches);
                let fuse = self.fuse(f)?;
                (select(f, &fuse.attention)?, Some(fuse))
            }
        };
        Ok((
            out,
            SrfcTrace {
                input: input.clone(),
                branches,
                fuse,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, trace: &SrfcTrace, grad_out: &Tensor) -> Result<Tensor> {
        let variant = self.variant();
        let mut grad_branches: [Option<Tensor>; N_BRANCHES] = Default::default();
        match variant {
            SrfcVariant::C0Only | SrfcVariant::C1Only | SrfcVariant::C2Only | SrfcVariant::Sum => {
                for &n in variant.branches() {
                    grad_branches[n] = Some(grad_out.detached());
                }
            }
            SrfcVariant::Srf => {
                let fuse = trace
                    .fuse
                    .as_ref()
                    .ok_or(Error::MissingContext { op: "srfc" })?;
                let f = all_branches(&trace.branches);
                let (mut grad_f, grad_m) = select_backward(f, &fuse.attention, grad_out)?;
                let grad_desc = self.fuse_backward(fuse, &grad_m)?;
                let channels = self.config.channels;
                for (n, g) in grad_f.iter_mut().enumerate() {
                    let pool = &fuse.pools[n];
                    let avg = Tensor::new(vec![1, grad_desc.shape()[1]], grad_desc.row(2 * n).to_vec())?;
                    let max =
                        Tensor::new(vec![1, grad_desc.shape()[1]], grad_desc.row(2 * n + 1).to_vec())?;
                    g.add_assign(&channel_pool_backward(pool, channels, &avg, &max)?);
                }
                let [g0, g1, g2] = grad_f;
                grad_branches = [Some(g0), Some(g1), Some(g2)];
            }
        }
        let mut grad_in = Tensor::zeros(trace.input.shape());
        for (n, g) in grad_branches.iter().enumerate() {
            if let Some(g) = g {
                grad_in.add_assign(&self.branches[n].backward(&trace.input, g)?);
            }
        }
        Ok(grad_in)
    }

    /// Backward through softmax and the two fuse convolutions, down to the descriptor.
    fn fuse_backward(&mut self, fuse: &FuseTrace, grad_m: &Tensor) -> Result<Tensor> {
        let grad_logits = softmax_channels_backward(fuse.attention.weights(), grad_m)?;
        let grad_hidden = self.fuse_expand.backward(&fuse.hidden, &grad_logits)?;
        let grad_hidden_pre = relu_backward(&fuse.hidden_pre, &grad_hidden)?;
        self.fuse_reduce.backward(&fuse.descriptor, &grad_hidden_pre)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (c, _) = input.dims2("srfc")?;
        if c != self.config.channels {
            return Err(Error::ShapeMismatch {
                op: "srfc",
                axis: "channels",
                expected: self.config.channels,
                actual: c,
            });
        }
        Ok(())
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (n, b) in self.branches.iter().enumerate() {
            b.visit_params(&format!("{prefix}.branch{n}"), f);
        }
        self.fuse_reduce.visit_params(&format!("{prefix}.fuse_reduce"), f);
        self.fuse_expand.visit_params(&format!("{prefix}.fuse_expand"), f);
    }

    pub fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (n, b) in self.branches.iter_mut().enumerate() {
            b.visit_params_mut(&format!("{prefix}.branch{n}"), f);
        }
        self.fuse_reduce.visit_params_mut(&format!("{prefix}.fuse_reduce"), f);
        self.fuse_expand.visit_params_mut(&format!("{prefix}.fuse_expand"), f);
    }
}

fn all_branches(b: &[Option<Tensor>; N_BRANCHES]) -> [&Tensor; N_BRANCHES] {
    [
        b[0].as_ref().expect("branch evaluated"),
        b[1].as_ref().expect("branch evaluated"),
        b[2].as_ref().expect("branch evaluated"),
    ]
}

/// `V[i][x] = Σ_n M[n][x] · F_n[i][x]`
pub fn select(features: [&Tensor; N_BRANCHES], attention: &AttentionMap) -> Result<Tensor> {
    let shape = features[0].shape().to_vec();
    let (channels, len) = features[0].dims2("srfc select")?;
    for f in &features[1..] {
        f.expect_shape("srfc select", &shape)?;
    }
    if attention.len() != len {
        return Err(Error::ShapeMismatch {
            op: "srfc select",
            axis: "attention length",
            expected: len,
            actual: attention.len(),
        });
    }
    let m = attention.weights();
    let mut v = Tensor::zeros(&shape);
    for (n, f) in features.iter().enumerate() {
        let weights = m.row(n);
        for i in 0..channels {
            for ((o, &fv), &w) in v.row_mut(i).iter_mut().zip(f.row(i)).zip(weights) {
                *o += w * fv;
            }
        }
    }
    Ok(v)
}

/// Gradients of [`select`] w.r.t. each branch output and the attention weights.
pub fn select_backward(
    features: [&Tensor; N_BRANCHES],
    attention: &AttentionMap,
    grad_out: &Tensor,
) -> Result<([Tensor; N_BRANCHES], Tensor)> {
    let (channels, len) = grad_out.dims2("srfc select grad_out")?;
    let m = attention.weights();
    let mut grad_m = Tensor::zeros(&[N_BRANCHES, len]);
    let grad_f = std::array::from_fn(|n| {
        let mut g = Tensor::zeros(&[channels, len]);
        for i in 0..channels {
            let go = grad_out.row(i);
            let fr = features[n].row(i);
            for x in 0..len {
                g.row_mut(i)[x] = go[x] * m.get2(n, x);
                grad_m.row_mut(n)[x] += go[x] * fr[x];
            }
        }
        g
    });
    Ok((grad_f, grad_m))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn block(channels: usize, variant: SrfcVariant, seed: u64) -> Srfc {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = SrfcConfig {
            channels,
            variant,
            ..SrfcConfig::default()
        };
        Srfc::new(config, 0.3, &mut rng).unwrap()
    }

    fn zero_fuse(s: &mut Srfc) {
        for conv in [&mut s.fuse_reduce, &mut s.fuse_expand] {
            conv.weight.data_mut().fill(0.0);
            conv.bias.data_mut().fill(0.0);
        }
    }

    #[test]
    fn dilation_rates() {
        assert_eq!((1..=3).map(dilation_rate).collect::<Vec<_>>(), vec![1, 3, 5]);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SrfcVariant::ALL {
            assert_eq!(v.as_str().parse::<SrfcVariant>().unwrap(), v);
            assert_eq!(v.column().to_string().parse::<SrfcVariant>().unwrap(), v);
        }
        assert!("c3_only".parse::<SrfcVariant>().is_err());
    }

    #[test]
    fn unit_kernel_split_copies_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let config = SrfcConfig {
            channels: 1,
            branch_kernel: 1,
            ..SrfcConfig::default()
        };
        let mut s = Srfc::new(config, 0.1, &mut rng).unwrap();
        for b in &mut s.branches {
            b.weight.data_mut().fill(1.0);
            b.bias.data_mut().fill(0.0);
        }
        let t = Tensor::from_rows(&[vec![0.5, -1.0, 2.0, 3.0]]).unwrap();
        for f in s.split(&t).unwrap() {
            assert_eq!(f, t);
        }
    }

    #[test]
    fn impulse_support_of_second_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let config = SrfcConfig {
            channels: 1,
            ..SrfcConfig::default()
        };
        let mut s = Srfc::new(config, 0.1, &mut rng).unwrap();
        for b in &mut s.branches {
            b.weight.data_mut().fill(1.0);
            b.bias.data_mut().fill(0.0);
        }
        let mut t = Tensor::zeros(&[1, 16]);
        t.data_mut()[8] = 1.0;
        let [_, f2, _] = s.split(&t).unwrap();
        let support: Vec<usize> = (0..16).filter(|&x| f2.data()[x] != 0.0).collect();
        assert_eq!(support, vec![5, 8, 11]);
    }

    #[test]
    fn zero_fuse_gives_uniform_attention() {
        let mut s = block(4, SrfcVariant::Srf, 1);
        zero_fuse(&mut s);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = Tensor::randn(&[4, 12], 1.0, &mut rng);
        let f = s.split(&t).unwrap();
        let fuse = s.fuse([&f[0], &f[1], &f[2]]).unwrap();
        for x in 0..12 {
            for w in fuse.attention.column(x) {
                assert!((w - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_branches_repeat_descriptor() {
        let s = block(3, SrfcVariant::Srf, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = Tensor::randn(&[3, 7], 1.0, &mut rng);
        let fuse = s.fuse([&f, &f, &f]).unwrap();
        let d = fuse.descriptor();
        for n in 1..3 {
            assert_eq!(d.row(2 * n), d.row(0));
            assert_eq!(d.row(2 * n + 1), d.row(1));
        }
    }

    #[test]
    fn select_one_hot_and_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[2, 5], 1.0, &mut rng)).collect();
        let mut onehot = Tensor::zeros(&[3, 5]);
        onehot.row_mut(1).fill(1.0);
        let v = select([&f[0], &f[1], &f[2]], &AttentionMap::new(onehot).unwrap()).unwrap();
        assert_eq!(v, f[1]);

        let uniform = AttentionMap::new(Tensor::full(&[3, 5], 1.0 / 3.0)).unwrap();
        let v = select([&f[0], &f[1], &f[2]], &uniform).unwrap();
        for k in 0..10 {
            let mean = (f[0].data()[k] + f[1].data()[k] + f[2].data()[k]) / 3.0;
            assert!((v.data()[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_map_validation() {
        assert!(AttentionMap::new(Tensor::full(&[3, 2], 0.5)).is_err());
        assert!(AttentionMap::new(Tensor::full(&[2, 2], 0.5)).is_err());
        let csv = AttentionMap::new(Tensor::full(&[3, 2], 1.0 / 3.0)).unwrap().to_csv();
        assert!(csv.starts_with("location_index,m1,m2,m3\n0,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn single_branch_variant_matches_split() {
        let s = block(4, SrfcVariant::C0Only, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = Tensor::randn(&[4, 10], 1.0, &mut rng);
        let (v, _) = s.forward(&t).unwrap();
        assert_eq!(v, s.split(&t).unwrap()[0]);
    }

    #[test]
    fn sum_is_three_times_uniform_select() {
        let mut srf = block(4, SrfcVariant::Srf, 3);
        zero_fuse(&mut srf);
        let mut sum = srf.clone();
        sum.config.variant = SrfcVariant::Sum;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = Tensor::randn(&[4, 10], 1.0, &mut rng);
        let (a, _) = srf.forward(&t).unwrap();
        let (b, _) = sum.forward(&t).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let s = block(4, SrfcVariant::Srf, 3);
        assert!(s.forward(&Tensor::zeros(&[3, 10])).is_err());
    }

    #[test]
    fn zero_upstream_leaves_zero_param_grads() {
        let mut s = block(3, SrfcVariant::Srf, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tensor::randn(&[3, 9], 1.0, &mut rng);
        let (_, trace) = s.forward(&t).unwrap();
        s.backward(&trace, &Tensor::zeros(&[3, 9])).unwrap();
        s.visit_params("srfc", &mut |name, p| {
            assert!(p.grad().unwrap().iter().all(|&g| g == 0.0), "{name}");
        });
    }
}
