//! Network architectures: expert CNN, gating CNN, the mixture, and the two baselines.

mod baselines;
pub mod config;
mod expert;
mod gating;
mod moc;
mod stack;

use std::fmt;

pub use baselines::{build_fc_gating, build_ordinary, FcGatingModel, OrdinaryCnn};
pub use config::{desk_configs, ConvSpec, ExpertNetConfig, GatingNetConfig, StackConfig, PATCH_SIZE};
pub use expert::{ExpertCache, ExpertNet};
pub use gating::{GateCache, GatingNet};
pub use moc::{build_moc, MoCModel};
pub use stack::ConvStack;

use crate::error::{Error, Result};
use crate::nn::{BatchNormParams, Mode};
use crate::params::Parameterized;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Moc,
    Ordinary,
    FcGating,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Moc => "moc",
            Variant::Ordinary => "ordinary",
            Variant::FcGating => "fc-gating",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "moc" | "moc-cnn" => Ok(Variant::Moc),
            "ordinary" => Ok(Variant::Ordinary),
            "fc-gating" | "fc" => Ok(Variant::FcGating),
            other => Err(Error::config(format!(
                "unknown model variant {other:?} (expected moc, ordinary or fc-gating)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Anything that turns a batch of patches into per-patch counts.
pub trait PatchCounter<T: Real>: Sync {
    /// Side length of the square patches this model accepts.
    fn patch_size(&self) -> usize;
    fn input_channels(&self) -> usize;
    fn num_experts(&self) -> usize;
    /// Eval-mode counts, `[N]`.
    fn count(&self, batch: &Tensor<T>) -> Result<Tensor<T>>;
    /// Eval-mode gate probabilities `[N,K]` for models with an input-dependent gate.
    fn gate(&self, batch: &Tensor<T>) -> Result<Option<Tensor<T>>>;
}

/// Any of the three trainable architectures.
#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Moc(MoCModel<T>),
    Ordinary(OrdinaryCnn<T>),
    FcGating(FcGatingModel<T>),
}

impl<T: Real> Model<T> {
    pub fn build(
        variant: Variant,
        expert: &ExpertNetConfig,
        gate: &GatingNetConfig,
        k: usize,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(match variant {
            Variant::Moc => Model::Moc(build_moc(expert, gate, k, lambda, seed)?),
            Variant::Ordinary => Model::Ordinary(build_ordinary(expert, seed)?),
            Variant::FcGating => Model::FcGating(build_fc_gating(expert, k, seed)?),
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            Model::Moc(_) => Variant::Moc,
            Model::Ordinary(_) => Variant::Ordinary,
            Model::FcGating(_) => Variant::FcGating,
        }
    }

    pub fn experts(&self) -> &[ExpertNet<T>] {
        match self {
            Model::Moc(m) => &m.experts,
            Model::Ordinary(m) => std::slice::from_ref(&m.expert),
            Model::FcGating(m) => &m.experts,
        }
    }

    pub fn expert_config(&self) -> ExpertNetConfig {
        self.experts()[0].config()
    }

    pub fn gate_config(&self) -> Option<GatingNetConfig> {
        match self {
            Model::Moc(m) => Some(m.gate_config()),
            _ => None,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Model::Moc(m) => m.lambda,
            _ => 0.0,
        }
    }

    pub(crate) fn norms_mut(&mut self) -> Vec<&mut BatchNormParams<T>> {
        match self {
            Model::Moc(m) => {
                let mut v: Vec<_> = m.experts.iter_mut().flat_map(|x| x.norms_mut()).collect();
                v.extend(m.gate.norms_mut());
                v
            }
            Model::Ordinary(m) => m.expert.norms_mut().into_iter().collect(),
            Model::FcGating(m) => m.experts.iter_mut().flat_map(|x| x.norms_mut()).collect(),
        }
    }

    pub(crate) fn norms(&self) -> Vec<&BatchNormParams<T>> {
        match self {
            Model::Moc(m) => {
                let mut v: Vec<_> = m.experts.iter().flat_map(|x| x.norms()).collect();
                v.extend(m.gate.norms());
                v
            }
            Model::Ordinary(m) => m.expert.norms().into_iter().collect(),
            Model::FcGating(m) => m.experts.iter().flat_map(|x| x.norms()).collect(),
        }
    }

    /// True once every batch norm has running statistics to use in eval mode.
    pub fn has_running_stats(&self) -> bool {
        self.norms().iter().all(|b| b.is_tracked())
    }

    /// Folds the batch statistics of one train-mode pass over `batch` into every
    /// batch norm's running statistics. Trainable parameters are untouched.
    pub fn calibrate(&mut self, batch: &Tensor<T>) -> Result<()> {
        let experts: &mut [ExpertNet<T>] = match self {
            Model::Moc(m) => {
                let rng = &mut rand::rngs::mock::StepRng::new(0, 0);
                let (_, cache) = m.gate.forward(batch, Mode::Train, rng)?;
                m.gate.update_running(&cache);
                &mut m.experts
            }
            Model::Ordinary(m) => std::slice::from_mut(&mut m.expert),
            Model::FcGating(m) => &mut m.experts,
        };
        for x in experts {
            let (_, cache) = x.forward(batch, Mode::Train)?;
            x.update_running(&cache);
        }
        Ok(())
    }
}

impl<T: Real> Parameterized<T> for Model<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        match self {
            Model::Moc(m) => m.visit_params(prefix, f),
            Model::Ordinary(m) => m.visit_params(prefix, f),
            Model::FcGating(m) => m.visit_params(prefix, f),
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        match self {
            Model::Moc(m) => m.visit_params_mut(prefix, f),
            Model::Ordinary(m) => m.visit_params_mut(prefix, f),
            Model::FcGating(m) => m.visit_params_mut(prefix, f),
        }
    }

    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor<T>)) {
        match self {
            Model::Moc(m) => m.visit_buffers(prefix, f),
            Model::Ordinary(m) => m.visit_buffers(prefix, f),
            Model::FcGating(m) => m.visit_buffers(prefix, f),
        }
    }

    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        match self {
            Model::Moc(m) => m.visit_buffers_mut(prefix, f),
            Model::Ordinary(m) => m.visit_buffers_mut(prefix, f),
            Model::FcGating(m) => m.visit_buffers_mut(prefix, f),
        }
    }
}

impl<T: Real> PatchCounter<T> for Model<T> {
    fn patch_size(&self) -> usize {
        self.expert_config().stack.input_size
    }

    fn input_channels(&self) -> usize {
        self.expert_config().stack.input_channels
    }

    fn num_experts(&self) -> usize {
        self.experts().len()
    }

    fn count(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Model::Moc(m) => m.predict(batch),
            Model::Ordinary(m) => m.predict(batch),
            Model::FcGating(m) => m.predict(batch),
        }
    }

    fn gate(&self, batch: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        match self {
            Model::Moc(m) => {
                let (g, _) = m.forward_gate(batch, Mode::Eval, &mut rand::rngs::mock::StepRng::new(0, 0))?;
                Ok(Some(g))
            }
            Model::Ordinary(_) => Ok(Some(Tensor::full(&[batch.dim(0), 1], T::one()))),
            Model::FcGating(_) => Ok(None),
        }
    }
}
