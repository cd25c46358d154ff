use rand::Rng;

use crate::error::Result;
use crate::model::config::ExpertNetConfig;
use crate::model::stack::{ConvStack, StackCache};
use crate::nn::{self, dense, dense_backward, DenseParams, Mode};
use crate::params::{join, Grads, Parameterized};
use crate::tensor::{Real, Tensor};

/// One counting expert: conv stack and a dense layer producing a scalar count.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertNet<T> {
    pub stack: ConvStack<T>,
    pub head: DenseParams<T>,
}

#[derive(Debug, Clone)]
pub struct ExpertCache<T> {
    stack: StackCache<T>,
    features: Tensor<T>,
}

impl<T> ExpertCache<T> {
    pub(crate) fn pool_selection(&self) -> impl Iterator<Item = usize> + '_ {
        self.stack.pool_selection()
    }
}

impl<T: Real> ExpertNet<T> {
    pub fn init<R: Rng + ?Sized>(config: &ExpertNetConfig, rng: &mut R) -> Result<Self> {
        let stack = ConvStack::init(config.stack, rng)?;
        let head = nn::init::dense(config.stack.feature_len()?, 1, rng);
        Ok(ExpertNet { stack, head })
    }

    pub fn config(&self) -> ExpertNetConfig {
        ExpertNetConfig {
            stack: self.stack.config,
        }
    }

    /// Counts for a batch `[N,C,S,S]`, returned as `[N]`.
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ExpertCache<T>)> {
        let (features, stack) = self.stack.forward(input, mode)?;
        let out = dense(&features, &self.head)?;
        let n = out.dim(0);
        Ok((out.reshape(&[n])?, ExpertCache { stack, features }))
    }

    /// Parameter gradients given `d loss / d count` per sample.
    pub fn backward(&self, input: &Tensor<T>, cache: &ExpertCache<T>, grad_counts: &Tensor<T>) -> Result<Grads<T>> {
        let n = grad_counts.len();
        let g = grad_counts.clone().reshape(&[n, 1])?;
        let (g_feat, head) = dense_backward(&cache.features, &self.head, &g)?;
        let mut grads = self.stack.backward(input, &cache.stack, g_feat)?;
        grads.push(head.weight);
        grads.push(head.bias);
        Ok(grads)
    }

    pub fn update_running(&mut self, cache: &ExpertCache<T>) {
        self.stack.update_running(&cache.stack);
    }

    pub(crate) fn norms_mut(&mut self) -> [&mut crate::nn::BatchNormParams<T>; 2] {
        self.stack.norms_mut()
    }

    pub(crate) fn norms(&self) -> [&crate::nn::BatchNormParams<T>; 2] {
        self.stack.norms()
    }

    pub fn has_running_stats(&self) -> bool {
        self.stack.norms().iter().all(|b| b.is_tracked())
    }
}

impl<T: Real> Parameterized<T> for ExpertNet<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.stack.visit_params(prefix, f);
        f(join(prefix, "head.weight"), &self.head.weight);
        f(join(prefix, "head.bias"), &self.head.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stack.visit_params_mut(prefix, f);
        f(join(prefix, "head.weight"), &mut self.head.weight);
        f(join(prefix, "head.bias"), &mut self.head.bias);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.stack.visit_buffers(prefix, f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stack.visit_buffers_mut(prefix, f);
    }
}

/// A bank of experts, named `expert.{i}` in order.
impl<T: Real> Parameterized<T> for [ExpertNet<T>] {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, x) in self.iter().enumerate() {
            x.visit_params(&join(prefix, &format!("expert.{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, x) in self.iter_mut().enumerate() {
            x.visit_params_mut(&join(prefix, &format!("expert.{i}")), f);
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        for (i, x) in self.iter().enumerate() {
            x.visit_buffers(&join(prefix, &format!("expert.{i}")), f);
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (i, x) in self.iter_mut().enumerate() {
            x.visit_buffers_mut(&join(prefix, &format!("expert.{i}")), f);
        }
    }
}
