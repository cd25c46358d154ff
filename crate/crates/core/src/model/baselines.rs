//! Comparison models: a single expert CNN, and experts merged by one
//! input-independent dense layer.

use crate::error::Result;
use crate::model::config::ExpertNetConfig;
use crate::model::expert::{ExpertCache, ExpertNet};
use crate::model::moc::{init_experts, run_experts};
use crate::nn::{self, dense, dense_backward, DenseGrads, DenseParams, Mode};
use crate::params::{join, Parameterized};
use crate::seed::{self, streams};
use crate::tensor::{Real, Tensor};

/// A lone expert trained directly on the squared counting error.
#[derive(Debug, Clone, PartialEq)]
pub struct OrdinaryCnn<T> {
    pub expert: ExpertNet<T>,
}

/// Same initialization stream as expert 0 of a mixture built from `seed`.
pub fn build_ordinary<T: Real>(config: &ExpertNetConfig, seed: u64) -> Result<OrdinaryCnn<T>> {
    let expert = init_experts(config, 1, seed)?.remove(0);
    Ok(OrdinaryCnn { expert })
}

impl<T: Real> OrdinaryCnn<T> {
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.expert.forward(batch, Mode::Eval)?.0)
    }
}

impl<T: Real> Parameterized<T> for OrdinaryCnn<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.expert.visit_params(&join(prefix, "expert.0"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.expert.visit_params_mut(&join(prefix, "expert.0"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.expert.visit_buffers(&join(prefix, "expert.0"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.expert.visit_buffers_mut(&join(prefix, "expert.0"), f);
    }
}

/// Experts whose outputs feed a `K -> 1` dense combiner. The combiner
/// weights are shared by every input.
#[derive(Debug, Clone, PartialEq)]
pub struct FcGatingModel<T> {
    pub experts: Vec<ExpertNet<T>>,
    pub combiner: DenseParams<T>,
}

pub fn build_fc_gating<T: Real>(config: &ExpertNetConfig, k: usize, seed: u64) -> Result<FcGatingModel<T>> {
    let experts = init_experts(config, k, seed)?;
    let combiner = nn::init::dense(k, 1, &mut seed::rng(seed, streams::COMBINER_INIT));
    Ok(FcGatingModel { experts, combiner })
}

impl<T: Real> FcGatingModel<T> {
    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn forward_experts(&self, batch: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<ExpertCache<T>>)> {
        run_experts(&self.experts, batch, mode)
    }

    /// `[N,K]` expert outputs to `[N]` predictions.
    pub fn combine(&self, e: &Tensor<T>) -> Result<Tensor<T>> {
        let y = dense(e, &self.combiner)?;
        let n = y.dim(0);
        y.reshape(&[n])
    }

    /// Returns `(d loss / d e [N,K], combiner grads)` from `d loss / d y [N]`.
    pub fn combine_backward(&self, e: &Tensor<T>, grad_y: &Tensor<T>) -> Result<(Tensor<T>, DenseGrads<T>)> {
        let n = grad_y.len();
        dense_backward(e, &self.combiner, &grad_y.clone().reshape(&[n, 1])?)
    }

    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (e, _) = self.forward_experts(batch, Mode::Eval)?;
        self.combine(&e)
    }
}

impl<T: Real> Parameterized<T> for FcGatingModel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.experts.as_slice().visit_params(prefix, f);
        f(join(prefix, "combiner.weight"), &self.combiner.weight);
        f(join(prefix, "combiner.bias"), &self.combiner.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.experts.as_mut_slice().visit_params_mut(prefix, f);
        f(join(prefix, "combiner.weight"), &mut self.combiner.weight);
        f(join(prefix, "combiner.bias"), &mut self.combiner.bias);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.experts.as_slice().visit_buffers(prefix, f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.experts.as_mut_slice().visit_buffers_mut(prefix, f);
    }
}
