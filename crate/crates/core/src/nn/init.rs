//! He-uniform initialization. Values are drawn in `f64` and cast, so the same
//! seed gives the same network (up to rounding) in either precision.

use rand::Rng;

use crate::nn::{Conv2dParams, DenseParams};
use crate::tensor::{Real, Tensor};

pub fn he_uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)))
}

/// Bias-free convolution (every convolution in the model zoo feeds a batch norm).
pub fn conv<T: Real, R: Rng + ?Sized>(filters: usize, channels: usize, k: usize, rng: &mut R) -> Conv2dParams<T> {
    Conv2dParams {
        kernels: he_uniform(&[filters, channels, k, k], channels * k * k, rng),
        bias: None,
    }
}

pub fn dense<T: Real, R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> DenseParams<T> {
    DenseParams {
        weight: he_uniform(&[inputs, outputs], inputs, rng),
        bias: Tensor::zeros(&[outputs]),
    }
}
