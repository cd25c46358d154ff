//! Layer kernels with hand-derived backward passes.
//!
//! Every kernel is a pure function of its inputs. The only mutable state is
//! batch-norm running statistics, updated explicitly by the caller through
//! [`BatchNormParams::update_running`].

mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod elu;
pub mod init;
mod pool;
mod softmax;

pub use batchnorm::{batchnorm2d, batchnorm2d_backward, BatchNormCache, BatchNormGrads, BatchNormParams};
pub(crate) use conv::conv2d_param_grads;
pub use conv::{conv2d, conv2d_backward, Conv2dGrads, Conv2dParams};
pub use dense::{dense, dense_backward, DenseGrads, DenseParams};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub(crate) use elu::elu_backward_from_output;
pub use elu::{elu, elu_backward};
pub use pool::{maxpool2d, maxpool2d_backward};
pub(crate) use pool::{maxpool2d_backward_indexed, maxpool2d_indexed};
pub use softmax::{softmax, softmax_backward};

/// Forward-pass mode for layers whose behavior differs between training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const DEFAULT_ELU_ALPHA: f64 = 1.0;
