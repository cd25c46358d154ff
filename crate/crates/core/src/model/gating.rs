use rand::Rng;

use crate::error::Result;
use crate::model::config::GatingNetConfig;
use crate::model::stack::{ConvStack, StackCache};
use crate::nn::{
    self, dense, dense_backward, dropout, dropout_backward, elu, elu_backward, softmax, softmax_backward, DenseParams,
    DropoutMask, Mode,
};
use crate::params::{join, Grads, Parameterized};
use crate::tensor::{Real, Tensor};

/// Gating classifier producing a probability vector over the experts.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNet<T> {
    pub stack: ConvStack<T>,
    pub fc1: DenseParams<T>,
    pub fc2: DenseParams<T>,
    pub hidden: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct GateCache<T> {
    stack: StackCache<T>,
    features: Tensor<T>,
    hidden_pre: Tensor<T>,
    mask: Option<DropoutMask<T>>,
    dropped: Tensor<T>,
    probs: Tensor<T>,
}

impl<T> GateCache<T> {
    pub fn probs(&self) -> &Tensor<T> {
        &self.probs
    }
}

impl<T> GateCache<T> {
    pub(crate) fn pool_selection(&self) -> impl Iterator<Item = usize> + '_ {
        self.stack.pool_selection()
    }
}

impl<T: Real> GatingNet<T> {
    pub fn init<R: Rng + ?Sized>(config: &GatingNetConfig, experts: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let stack = ConvStack::init(config.stack, rng)?;
        let fc1 = nn::init::dense(config.stack.feature_len()?, config.hidden, rng);
        let fc2 = nn::init::dense(config.hidden, experts, rng);
        Ok(GatingNet {
            stack,
            fc1,
            fc2,
            hidden: config.hidden,
            dropout: config.dropout,
        })
    }

    pub fn config(&self) -> GatingNetConfig {
        GatingNetConfig {
            stack: self.stack.config,
            hidden: self.hidden,
            dropout: self.dropout,
        }
    }

    pub fn experts(&self) -> usize {
        self.fc2.bias.len()
    }

    /// Gate probabilities `[N,K]`. Dropout draws from `rng` in train mode only.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, GateCache<T>)> {
        let (features, stack) = self.stack.forward(input, mode)?;
        let hidden_pre = dense(&features, &self.fc1)?;
        let act = elu(&hidden_pre, T::of(self.stack.config.elu_alpha));
        let (dropped, mask) = dropout(&act, self.dropout, mode, rng)?;
        let probs = softmax(&dense(&dropped, &self.fc2)?)?;
        Ok((
            probs.clone(),
            GateCache {
                stack,
                features,
                hidden_pre,
                mask,
                dropped,
                probs,
            },
        ))
    }

    /// Parameter gradients given `d loss / d g` (chained through the softmax here).
    pub fn backward(&self, input: &Tensor<T>, cache: &GateCache<T>, grad_probs: &Tensor<T>) -> Result<Grads<T>> {
        let g_logits = softmax_backward(&cache.probs, grad_probs);
        let (g, fc2) = dense_backward(&cache.dropped, &self.fc2, &g_logits)?;
        let g = dropout_backward(cache.mask.as_ref(), &g);
        let g = elu_backward(&cache.hidden_pre, T::of(self.stack.config.elu_alpha), &g);
        let (g_feat, fc1) = dense_backward(&cache.features, &self.fc1, &g)?;
        let mut grads = self.stack.backward(input, &cache.stack, g_feat)?;
        grads.extend([fc1.weight, fc1.bias, fc2.weight, fc2.bias]);
        Ok(grads)
    }

    pub fn update_running(&mut self, cache: &GateCache<T>) {
        self.stack.update_running(&cache.stack);
    }

    pub(crate) fn norms_mut(&mut self) -> [&mut crate::nn::BatchNormParams<T>; 2] {
        self.stack.norms_mut()
    }

    pub(crate) fn norms(&self) -> [&crate::nn::BatchNormParams<T>; 2] {
        self.stack.norms()
    }
}

impl<T: Real> Parameterized<T> for GatingNet<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.stack.visit_params(prefix, f);
        f(join(prefix, "fc1.weight"), &self.fc1.weight);
        f(join(prefix, "fc1.bias"), &self.fc1.bias);
        f(join(prefix, "fc2.weight"), &self.fc2.weight);
        f(join(prefix, "fc2.bias"), &self.fc2.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stack.visit_params_mut(prefix, f);
        f(join(prefix, "fc1.weight"), &mut self.fc1.weight);
        f(join(prefix, "fc1.bias"), &mut self.fc1.bias);
        f(join(prefix, "fc2.weight"), &mut self.fc2.weight);
        f(join(prefix, "fc2.bias"), &mut self.fc2.bias);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.stack.visit_buffers(prefix, f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stack.visit_buffers_mut(prefix, f);
    }
}
