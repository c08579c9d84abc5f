//! Forward and backward kernels for the layer vocabulary of the networks.
//!
//! Every kernel works on one `[H, W, C]` sample except batch norm, which
//! needs the whole minibatch. Backward functions return exact analytic
//! gradients; the finite-difference suites in the tests pin them down.

mod activation;
mod conv;
mod dense;
mod norm;
mod pool;
pub(crate) mod transposed;

pub use activation::{
    log_softmax_channels, relu, relu_backward, sigmoid, softmax_backward, softmax_channels,
    softmax_channels_masked,
};
pub use conv::{conv2d, conv2d_backward, ConvGrads, GradRequest};
pub use dense::{dense, dense_backward, global_avg_pool, global_avg_pool_backward};
pub use norm::{batch_norm_backward, batch_norm_channel, NormCache, NormGrads, NormMode, NormParams, BN_EPS, BN_MOMENTUM};
pub use pool::{avg_pool2, avg_pool2_backward};
pub use transposed::{transposed_conv2d, transposed_conv2d_backward};

/// Output rows handled per work item when accumulating kernel gradients.
/// Fixed so the summation order does not depend on the thread count.
pub(crate) const ROW_BLOCK: usize = 8;
