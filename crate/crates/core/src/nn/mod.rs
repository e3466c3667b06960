//! Minimal CPU tensor and layer kernels with hand-written backward passes.
//!
//! Every layer splits into a `forward` that returns its output plus a cache and
//! a `backward` that consumes the cache, accumulates parameter gradients and
//! optionally returns the input gradient. All kernels are single-threaded and
//! reduce in a fixed order, so results are bitwise reproducible.

mod adam;
mod layers;
mod param;
mod tensor;

pub use adam::Adam;
pub use layers::{
    apply_mask, dropout_mask, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh,
    tanh_backward, Conv2d, Conv2dCache, ConvGeometry, ConvTranspose2d, ConvTranspose2dCache,
    InstanceNorm2d, InstanceNormCache,
};
pub use param::{Param, Parameterized};
pub use tensor::{Scalar, Tensor};
