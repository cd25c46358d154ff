use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::config::{ExpertNetConfig, GatingNetConfig};
use crate::model::expert::{ExpertCache, ExpertNet};
use crate::model::gating::{GateCache, GatingNet};
use crate::moe::{self, validate_lambda};
use crate::nn::Mode;
use crate::params::{join, Parameterized};
use crate::seed::{self, streams};
use crate::tensor::{Real, Tensor};

/// K counting experts combined by a softmax gate.
#[derive(Debug, Clone, PartialEq)]
pub struct MoCModel<T> {
    /// Weight of the gate-variance penalty.
    pub lambda: f64,
    pub experts: Vec<ExpertNet<T>>,
    pub gate: GatingNet<T>,
}

/// Experts seeded from `(seed, EXPERT_INIT + k)`, so expert `k` does not depend on K.
pub(crate) fn init_experts<T: Real>(config: &ExpertNetConfig, k: usize, seed: u64) -> Result<Vec<ExpertNet<T>>> {
    if k == 0 {
        return Err(Error::config("the number of experts must be at least 1"));
    }
    (0..k)
        .map(|i| ExpertNet::init(config, &mut seed::rng(seed, streams::EXPERT_INIT + i as u64)))
        .collect()
}

/// Runs every expert on the batch; column `k` of the result is expert `k`.
pub(crate) fn run_experts<T: Real>(
    experts: &[ExpertNet<T>],
    batch: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Vec<ExpertCache<T>>)> {
    let outs: Vec<(Tensor<T>, ExpertCache<T>)> = experts
        .par_iter()
        .map(|x| x.forward(batch, mode))
        .collect::<Result<_>>()?;
    let (n, k) = (batch.dim(0), experts.len());
    let mut e = Tensor::zeros(&[n, k]);
    for (j, (col, _)) in outs.iter().enumerate() {
        for (i, &v) in col.data().iter().enumerate() {
            e.data_mut()[i * k + j] = v;
        }
    }
    Ok((e, outs.into_iter().map(|(_, c)| c).collect()))
}

pub fn build_moc<T: Real>(
    expert: &ExpertNetConfig,
    gate: &GatingNetConfig,
    k: usize,
    lambda: f64,
    seed: u64,
) -> Result<MoCModel<T>> {
    validate_lambda(lambda)?;
    let (es, gs) = (&expert.stack, &gate.stack);
    if es.input_size != gs.input_size || es.input_channels != gs.input_channels {
        return Err(Error::config(format!(
            "expert input {}x{}x{} differs from gate input {}x{}x{}",
            es.input_channels, es.input_size, es.input_size, gs.input_channels, gs.input_size, gs.input_size
        )));
    }
    let experts = init_experts(expert, k, seed)?;
    let gate = GatingNet::init(gate, k, &mut seed::rng(seed, streams::GATE_INIT))?;
    Ok(MoCModel { lambda, experts, gate })
}

impl<T: Real> MoCModel<T> {
    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn expert_config(&self) -> ExpertNetConfig {
        self.experts[0].config()
    }

    pub fn gate_config(&self) -> GatingNetConfig {
        self.gate.config()
    }

    /// `e[n,k]`, each expert evaluated independently.
    pub fn forward_experts(&self, batch: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Vec<ExpertCache<T>>)> {
        run_experts(&self.experts, batch, mode)
    }

    /// `g[n,k]`, rows are probability vectors.
    pub fn forward_gate<R: Rng + ?Sized>(
        &self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, GateCache<T>)> {
        self.gate.forward(batch, mode, rng)
    }

    /// Eval-mode mixture prediction `y_n = sum_k g_nk e_nk`.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let (e, _) = self.forward_experts(batch, Mode::Eval)?;
        let (g, _) = self.forward_gate(batch, Mode::Eval, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        moe::combine(&g, &e)
    }

    /// Reorders experts (and the matching gate output units) so that new expert
    /// `i` is old expert `perm[i]`. The mixture prediction is unchanged.
    pub fn permute_experts(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::validation(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        let mut out = self.clone();
        out.experts = perm.iter().map(|&p| self.experts[p].clone()).collect();
        let hidden = self.gate.fc2.weight.dim(0);
        for h in 0..hidden {
            for (i, &p) in perm.iter().enumerate() {
                out.gate.fc2.weight.data_mut()[h * k + i] = self.gate.fc2.weight.data()[h * k + p];
            }
        }
        for (i, &p) in perm.iter().enumerate() {
            out.gate.fc2.bias.data_mut()[i] = self.gate.fc2.bias.data()[p];
        }
        Ok(out)
    }
}

impl<T: Real> Parameterized<T> for MoCModel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.experts.as_slice().visit_params(prefix, f);
        self.gate.visit_params(&join(prefix, "gate"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.experts.as_mut_slice().visit_params_mut(prefix, f);
        self.gate.visit_params_mut(&join(prefix, "gate"), f);
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        self.experts.as_slice().visit_buffers(prefix, f);
        self.gate.visit_buffers(&join(prefix, "gate"), f);
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.experts.as_mut_slice().visit_buffers_mut(prefix, f);
        self.gate.visit_buffers_mut(&join(prefix, "gate"), f);
    }
}
