//! Dense `f64` tensors with forward kernels and hand-written adjoints.
//!
//! There is no tape: each layer keeps whatever it needs from the forward pass
//! and calls the matching `*_backward` kernel itself. Backward kernels return
//! fresh gradients; layers accumulate them into their parameters' grad
//! buffers, so a training step must zero those buffers first.

mod activation;
mod conv;
mod gradcheck;
mod pool;
mod tensor;

pub use activation::{
    relu_backward, relu_forward, sigmoid, sigmoid_backward, sigmoid_forward,
    softmax_channels_backward, softmax_channels_forward, softplus,
};
pub use conv::{conv1d_backward, conv1d_forward, Conv1d, ConvGrads, ConvSpec};
pub use gradcheck::{
    finite_difference_error, grad_check, grad_check_at, relative_error, DifferentiableOp,
    FD_EPSILON,
};
pub use pool::{
    channel_pool_backward, channel_pool_forward, temporal_maxpool_backward,
    temporal_maxpool_forward, ChannelPool, TemporalMaxPool,
};
pub use tensor::Tensor;
