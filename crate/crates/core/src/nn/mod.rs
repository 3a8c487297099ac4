//! Minimal CPU layers with explicit backward passes.
//!
//! Every layer's `forward` returns its output together with whatever the
//! matching `backward` needs; nothing is stored inside the layer itself, so
//! parameters can be shared read-only between concurrent forward passes.

mod conv;
mod ops;
mod param;

pub use conv::{Conv2d, ConvCache};
pub use ops::{
    avg_pool2, avg_pool2_backward, elu, elu_backward, sigmoid, sigmoid_backward, softplus,
    softplus_backward, upsample_to, upsample_to_backward,
};
pub use param::Param;
