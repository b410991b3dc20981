//! Dense tensors and the differentiable kernels the network is assembled from.

mod activation;
mod conv;
mod gemm;
pub mod gradcheck;
pub mod init;
mod layer;
mod linear;
mod real;
mod softmax;
mod tensor;

pub use activation::{activation, activation_backward, relu, sigmoid, Activation, ActivationKind};
pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, Conv2d, ConvGeometry,
};
pub use gemm::gemm;
pub use layer::{Layer, Op, Params, SeedRng};
pub use linear::{matvec_acc, matvec_t_acc, outer_acc, Linear};
pub use real::{Precision, Real};
pub use softmax::{softmax, softmax_backward, softmax_in_place, Softmax};
pub use tensor::Tensor;
