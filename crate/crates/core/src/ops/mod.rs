//! Layer kernels: forward and hand-written backward passes.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod flops;
pub mod pool;

pub use activation::{relu_backward, relu_forward, softmax_pixelwise_forward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_infer, batchnorm_forward_train,
    BatchNorm, BnCache, BnGrads, BnMode,
};
pub use conv::{
    full_conv_forward, full_conv_forward_counted, separable_conv_backward,
    separable_conv_forward, separable_conv_forward_counted, SeparableConv, SeparableGrads,
    KERNEL,
};
pub use flops::{cost_ratio, flops_separable, FlopReport};
pub use pool::{
    maxpool_backward, maxpool_forward, maxpool_infer, upsample_nearest_backward, upsample_nearest_forward,
    PoolIndices,
};
