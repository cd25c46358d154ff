//! Mixture of counting CNNs.
//!
//! K expert networks each regress an object count from a 72×72 patch. A gating
//! network weights their outputs with a softmax, and the two are trained with
//! separate losses: experts on the mixture's squared error, the gate on the same
//! error plus a penalty on the variance of its weights.

pub mod audit;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod moe;
pub mod nn;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use params::{Grads, Parameterized};
pub use tensor::{Precision, Real, Tensor};
