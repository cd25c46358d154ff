use crate::error::{Error, Result};
use crate::model::config::StackConfig;
use crate::nn::{
    self, batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, elu, BatchNormCache, BatchNormParams,
    Conv2dParams, Mode,
};
use crate::params::join;
use crate::tensor::{Real, Tensor};

/// Shared feature extractor of the expert and gating networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<T> {
    pub config: StackConfig,
    pub conv1: Conv2dParams<T>,
    pub bn1: BatchNormParams<T>,
    pub conv2: Conv2dParams<T>,
    pub bn2: BatchNormParams<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct StackCache<T> {
    bn1: BatchNormCache<T>,
    act1: Tensor<T>,
    pool1_index: Vec<usize>,
    pooled1: Tensor<T>,
    bn2: BatchNormCache<T>,
    act2: Tensor<T>,
    pool2_index: Vec<usize>,
    pooled_shape: Vec<usize>,
}

impl<T> StackCache<T> {
    /// Argmax positions chosen by both pooling layers.
    pub(crate) fn pool_selection(&self) -> impl Iterator<Item = usize> + '_ {
        self.pool1_index.iter().chain(&self.pool2_index).copied()
    }
}

impl<T: Real> ConvStack<T> {
    pub(crate) fn init<R: rand::Rng + ?Sized>(config: StackConfig, rng: &mut R) -> Result<Self> {
        config.output_shape()?;
        let [c1, c2] = config.conv;
        Ok(ConvStack {
            config,
            conv1: nn::init::conv(c1.filters, config.input_channels, c1.kernel, rng),
            bn1: BatchNormParams::new(c1.filters),
            conv2: nn::init::conv(c2.filters, c1.filters, c2.kernel, rng),
            bn2: BatchNormParams::new(c2.filters),
        })
    }

    pub(crate) fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let c = &self.config;
        let s = input.shape();
        if s.len() != 4 || s[1] != c.input_channels || s[2] != c.input_size || s[3] != c.input_size {
            return Err(Error::validation(format!(
                "expected a batch of shape [N, {}, {}, {}], got {s:?}",
                c.input_channels, c.input_size, c.input_size
            )));
        }
        Ok(())
    }

    /// `[N,C,S,S] -> [N, features]`.
    pub(crate) fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, StackCache<T>)> {
        self.check_input(input)?;
        let alpha = T::of(self.config.elu_alpha);
        let [p1, p2] = self.config.pools;
        let (normed1, bn1) = batchnorm2d(&conv2d(input, &self.conv1, 1)?, &self.bn1, mode)?;
        let act1 = elu(&normed1, alpha);
        let (pooled1, pool1_index) = nn::maxpool2d_indexed(&act1, p1)?;
        let (normed2, bn2) = batchnorm2d(&conv2d(&pooled1, &self.conv2, 1)?, &self.bn2, mode)?;
        let act2 = elu(&normed2, alpha);
        let (pooled2, pool2_index) = nn::maxpool2d_indexed(&act2, p2)?;
        let pooled_shape = pooled2.shape().to_vec();
        let n = pooled_shape[0];
        let features = pooled2.reshape(&[n, pooled_shape[1..].iter().product()])?;
        Ok((
            features,
            StackCache {
                bn1,
                act1,
                pool1_index,
                pooled1,
                bn2,
                act2,
                pool2_index,
                pooled_shape,
            },
        ))
    }

    /// Parameter gradients in visit order (conv1.kernels, bn1.gamma, bn1.beta, conv2.kernels, ...).
    pub(crate) fn backward(
        &self,
        input: &Tensor<T>,
        cache: &StackCache<T>,
        grad_features: Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let alpha = T::of(self.config.elu_alpha);
        let g = grad_features.reshape(&cache.pooled_shape)?;
        let g = nn::maxpool2d_backward_indexed(cache.act2.shape(), &cache.pool2_index, &g);
        let g = nn::elu_backward_from_output(&cache.act2, alpha, &g);
        let (g, bn2) = batchnorm2d_backward(&cache.bn2, &self.bn2, &g)?;
        let (g, conv2) = conv2d_backward(&cache.pooled1, &self.conv2, 1, &g)?;
        let g = nn::maxpool2d_backward_indexed(cache.act1.shape(), &cache.pool1_index, &g);
        let g = nn::elu_backward_from_output(&cache.act1, alpha, &g);
        let (g, bn1) = batchnorm2d_backward(&cache.bn1, &self.bn1, &g)?;
        let conv1 = nn::conv2d_param_grads(input, &self.conv1, 1, &g)?;
        Ok(vec![
            conv1.kernels,
            bn1.gamma,
            bn1.beta,
            conv2.kernels,
            bn2.gamma,
            bn2.beta,
        ])
    }

    pub(crate) fn update_running(&mut self, cache: &StackCache<T>) {
        self.bn1.update_running(&cache.bn1);
        self.bn2.update_running(&cache.bn2);
    }

    pub(crate) fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "conv1.kernels"), &self.conv1.kernels);
        f(join(prefix, "bn1.gamma"), &self.bn1.gamma);
        f(join(prefix, "bn1.beta"), &self.bn1.beta);
        f(join(prefix, "conv2.kernels"), &self.conv2.kernels);
        f(join(prefix, "bn2.gamma"), &self.bn2.gamma);
        f(join(prefix, "bn2.beta"), &self.bn2.beta);
    }

    pub(crate) fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "conv1.kernels"), &mut self.conv1.kernels);
        f(join(prefix, "bn1.gamma"), &mut self.bn1.gamma);
        f(join(prefix, "bn1.beta"), &mut self.bn1.beta);
        f(join(prefix, "conv2.kernels"), &mut self.conv2.kernels);
        f(join(prefix, "bn2.gamma"), &mut self.bn2.gamma);
        f(join(prefix, "bn2.beta"), &mut self.bn2.beta);
    }

    pub(crate) fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        f(join(prefix, "bn1.running_mean"), &self.bn1.running_mean);
        f(join(prefix, "bn1.running_var"), &self.bn1.running_var);
        f(join(prefix, "bn2.running_mean"), &self.bn2.running_mean);
        f(join(prefix, "bn2.running_var"), &self.bn2.running_var);
    }

    pub(crate) fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "bn1.running_mean"), &mut self.bn1.running_mean);
        f(join(prefix, "bn1.running_var"), &mut self.bn1.running_var);
        f(join(prefix, "bn2.running_mean"), &mut self.bn2.running_mean);
        f(join(prefix, "bn2.running_var"), &mut self.bn2.running_var);
    }

    pub(crate) fn norms_mut(&mut self) -> [&mut BatchNormParams<T>; 2] {
        [&mut self.bn1, &mut self.bn2]
    }

    pub(crate) fn norms(&self) -> [&BatchNormParams<T>; 2] {
        [&self.bn1, &self.bn2]
    }
}
