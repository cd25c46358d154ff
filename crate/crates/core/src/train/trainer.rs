use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{random_crops, render_density, PatchSample, Scene};
use crate::error::{Error, Result};
use crate::model::{ExpertCache, ExpertNet, Model};
use crate::moe::{self, BatchPrediction, GatingLossBreakdown};
use crate::nn::Mode;
use crate::params::{Grads, Parameterized};
use crate::seed::{self, streams};
use crate::tensor::{Real, Tensor};
use crate::train::adam::{adam_step, AdamState};
use crate::train::config::TrainingConfig;
use crate::train::log::EpochLog;

/// Training patches packed contiguously for fast batch assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet<T> {
    size: usize,
    images: Vec<T>,
    targets: Vec<T>,
}

impl<T: Real> PatchSet<T> {
    pub fn from_samples(samples: &[PatchSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::config("training set is empty"))?;
        let size = first.patch.dim(1);
        let mut images = Vec::with_capacity(samples.len() * size * size);
        let mut targets = Vec::with_capacity(samples.len());
        for s in samples {
            if s.patch.shape() != [1, size, size] {
                return Err(Error::validation(format!(
                    "patch from {} has shape {:?}, expected [1, {size}, {size}]",
                    s.origin.scene_id,
                    s.patch.shape()
                )));
            }
            images.extend(s.patch.data().iter().map(|&v| T::of(v)));
            targets.push(T::of(s.target));
        }
        Ok(PatchSet { size, images, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.size
    }

    /// `([n, 1, S, S], [n])` for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Tensor<T>) {
        let area = self.size * self.size;
        let mut x = Vec::with_capacity(indices.len() * area);
        for &i in indices {
            x.extend_from_slice(&self.images[i * area..(i + 1) * area]);
        }
        let t = indices.iter().map(|&i| self.targets[i]).collect();
        (
            Tensor::from_vec(&[indices.len(), 1, self.size, self.size], x).expect("batch shape"),
            Tensor::from_vec(&[indices.len()], t).expect("target shape"),
        )
    }
}

/// Random crops from every scene; scene `i` of the list draws its offsets from
/// `(seed, CROPS + i)`.
pub fn training_samples(scenes: &[Scene], config: &TrainingConfig) -> Result<Vec<PatchSample>> {
    let per_scene: Vec<Vec<PatchSample>> = scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let density = render_density(s, config.sigma)?;
            let mut rng = seed::rng(config.seed, streams::CROPS + i as u64);
            random_crops(s, &density, config.patch_size(), config.crops_per_image, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(per_scene.concat())
}

/// Losses of one mini-batch, all measured before the update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub expert_loss: f64,
    /// Absent for the fc-gating baseline, which has no gate.
    pub gate: Option<GatingLossBreakdown>,
    /// Column sums of the gate matrix over the batch.
    pub gate_sum: Option<Vec<f64>>,
    pub samples: usize,
}

/// Sample-weighted sums over the steps of the current epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct EpochAccumulator {
    pub samples: usize,
    pub expert: f64,
    pub mse: f64,
    pub penalty: f64,
    pub gate_sum: Option<Vec<f64>>,
}

impl EpochAccumulator {
    fn add(&mut self, s: &StepStats) {
        let n = s.samples as f64;
        self.samples += s.samples;
        self.expert += s.expert_loss * n;
        if let Some(g) = &s.gate {
            self.mse += g.mse * n;
            self.penalty += g.penalty * n;
        }
        if let Some(sum) = &s.gate_sum {
            let acc = self.gate_sum.get_or_insert_with(|| vec![0.0; sum.len()]);
            for (a, b) in acc.iter_mut().zip(sum) {
                *a += b;
            }
        }
    }

    fn finish(&mut self, epoch: usize) -> EpochLog {
        let acc = std::mem::take(self);
        let n = acc.samples as f64;
        let mean_gate = acc.gate_sum.map(|s| s.into_iter().map(|v| v / n).collect::<Vec<_>>());
        EpochLog {
            epoch,
            expert_loss: acc.expert / n,
            gate_mse: mean_gate.as_ref().map(|_| acc.mse / n),
            gate_penalty: mean_gate.as_ref().map(|_| acc.penalty / n),
            gate_entropy: mean_gate.as_deref().map(moe::entropy),
            mean_gate,
        }
    }
}

/// A model together with its optimizer state and position in the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub config: TrainingConfig,
    pub model: Model<T>,
    /// Experts (and, for fc-gating, the combiner).
    pub expert_opt: AdamState<T>,
    /// Gating network; present only for the mixture.
    pub gate_opt: Option<AdamState<T>>,
    /// Mini-batches completed so far.
    pub step: u64,
    pub(crate) acc: EpochAccumulator,
}

fn column<T: Real>(m: &Tensor<T>, j: usize) -> Tensor<T> {
    let k = m.dim(1);
    Tensor::from_fn(&[m.dim(0)], |i| m.data()[i * k + j])
}

/// Parameter gradients of every expert given `d loss / d e` as `[N,K]`.
fn experts_backward<T: Real>(
    experts: &[ExpertNet<T>],
    input: &Tensor<T>,
    caches: &[ExpertCache<T>],
    grad_e: &Tensor<T>,
) -> Result<Grads<T>> {
    let per: Vec<Grads<T>> = experts
        .par_iter()
        .zip(caches)
        .enumerate()
        .map(|(j, (net, cache))| net.backward(input, cache, &column(grad_e, j)))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

fn gate_sums<T: Real>(g: &Tensor<T>) -> Vec<f64> {
    let k = g.dim(1);
    let mut sums = vec![0.0; k];
    for row in g.data().chunks_exact(k) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v.to_f64_lossless();
        }
    }
    sums
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        if config.precision != T::PRECISION {
            return Err(Error::config(format!(
                "config asks for {} but the trainer runs in {}",
                config.precision,
                T::PRECISION
            )));
        }
        let model = Model::build(
            config.variant,
            &config.expert,
            &config.gate,
            config.k,
            config.lambda,
            config.seed,
        )?;
        let (expert_opt, gate_opt) = match &model {
            Model::Moc(m) => (AdamState::new(m.experts.as_slice()), Some(AdamState::new(&m.gate))),
            other => (AdamState::new(other), None),
        };
        Ok(Trainer {
            config,
            model,
            expert_opt,
            gate_opt,
            step: 0,
            acc: EpochAccumulator::default(),
        })
    }

    fn diverged(&self, expert_loss: f64, gate_loss: f64) -> Error {
        Error::Diverged {
            step: self.step,
            expert_loss,
            gate_loss,
            max_abs_param: self.model.max_abs_param(),
        }
    }

    /// One simultaneous update of experts and gate from a single forward pass.
    ///
    /// Experts follow `dL_expert/de` with the gate held fixed; the gate follows
    /// `dL_gate/dg` with expert outputs held fixed. Batch-norm running
    /// statistics of every network absorb this batch.
    pub fn train_step(&mut self, x: &Tensor<T>, t: &Tensor<T>) -> Result<StepStats> {
        let n = x.dim(0);
        let lambda = self.config.lambda;
        let dropout_seed = seed::derive(self.config.seed, streams::DROPOUT);
        let stats = match &mut self.model {
            Model::Moc(m) => {
                let (e, caches) = m.forward_experts(x, Mode::Train)?;
                let mut rng = seed::rng(dropout_seed, self.step);
                let (g, gate_cache) = m.gate.forward(x, Mode::Train, &mut rng)?;
                let pred = BatchPrediction::new(e, g, t.clone())?;
                let expert_loss = moe::expert_loss(&pred);
                let gate = moe::gating_loss(&pred, lambda)?;
                if !(expert_loss.is_finite() && gate.total.is_finite()) {
                    return Err(self.diverged(expert_loss, gate.total));
                }
                let expert_grads = experts_backward(&m.experts, x, &caches, &moe::grad_expert_outputs(&pred))?;
                let gate_grads = m.gate.backward(x, &gate_cache, &moe::grad_gate_probs(&pred, lambda)?)?;
                for (net, cache) in m.experts.iter_mut().zip(&caches) {
                    net.update_running(cache);
                }
                m.gate.update_running(&gate_cache);
                adam_step(
                    m.experts.as_mut_slice(),
                    &expert_grads,
                    &mut self.expert_opt,
                    &self.config.expert_opt,
                )?;
                let gate_opt = self.gate_opt.as_mut().expect("mixture has a gate optimizer");
                adam_step(&mut m.gate, &gate_grads, gate_opt, &self.config.gate_opt)?;
                StepStats {
                    expert_loss,
                    gate_sum: Some(gate_sums(&pred.g)),
                    gate: Some(gate),
                    samples: n,
                }
            }
            Model::Ordinary(m) => {
                let (e, cache) = m.expert.forward(x, Mode::Train)?;
                let pred = BatchPrediction::new(e.reshape(&[n, 1])?, Tensor::full(&[n, 1], T::one()), t.clone())?;
                let expert_loss = moe::expert_loss(&pred);
                if !expert_loss.is_finite() {
                    return Err(self.diverged(expert_loss, expert_loss));
                }
                let grads = experts_backward(
                    std::slice::from_ref(&m.expert),
                    x,
                    std::slice::from_ref(&cache),
                    &moe::grad_expert_outputs(&pred),
                )?;
                m.expert.update_running(&cache);
                adam_step(m, &grads, &mut self.expert_opt, &self.config.expert_opt)?;
                StepStats {
                    expert_loss,
                    gate_sum: Some(vec![n as f64]),
                    gate: Some(moe::gating_loss(&pred, 0.0)?),
                    samples: n,
                }
            }
            Model::FcGating(m) => {
                let (e, caches) = m.forward_experts(x, Mode::Train)?;
                let y = m.combine(&e)?;
                let scale = T::of(2.0 / n as f64);
                let residual = Tensor::from_fn(&[n], |i| y.data()[i] - t.data()[i]);
                let expert_loss = residual.data().iter().map(|r| r.to_f64_lossless().powi(2)).sum::<f64>() / n as f64;
                if !expert_loss.is_finite() {
                    return Err(self.diverged(expert_loss, f64::NAN));
                }
                let grad_y = residual.map(|r| scale * r);
                let (grad_e, combiner) = m.combine_backward(&e, &grad_y)?;
                let mut grads = experts_backward(&m.experts, x, &caches, &grad_e)?;
                grads.push(combiner.weight);
                grads.push(combiner.bias);
                for (net, cache) in m.experts.iter_mut().zip(&caches) {
                    net.update_running(cache);
                }
                adam_step(m, &grads, &mut self.expert_opt, &self.config.expert_opt)?;
                StepStats {
                    expert_loss,
                    gate: None,
                    gate_sum: None,
                    samples: n,
                }
            }
        };
        self.step += 1;
        Ok(stats)
    }

    pub fn batches_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self, samples: usize) -> u64 {
        self.batches_per_epoch(samples) * self.config.epochs as u64
    }

    /// Sample order of a (0-based) epoch, drawn from `(seed, SHUFFLE)` and the epoch index.
    pub fn epoch_order(&self, epoch: u64, samples: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut seed::rng(seed::derive(self.config.seed, streams::SHUFFLE), epoch));
        order
    }

    pub fn is_finished(&self, samples: usize) -> bool {
        self.step >= self.total_steps(samples)
    }

    /// Trains until the schedule ends or `max_steps` more steps have run,
    /// whichever comes first. Returns a log row for every epoch completed
    /// during this call; `on_epoch` sees each row as soon as it exists.
    pub fn run(
        &mut self,
        data: &PatchSet<T>,
        max_steps: Option<u64>,
        mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
    ) -> Result<Vec<EpochLog>> {
        if data.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        if data.patch_size() != self.config.patch_size() {
            return Err(Error::config(format!(
                "patches are {0}x{0} but the model expects {1}x{1}",
                data.patch_size(),
                self.config.patch_size()
            )));
        }
        let bpe = self.batches_per_epoch(data.len());
        let stop = self
            .total_steps(data.len())
            .min(max_steps.map_or(u64::MAX, |m| self.step.saturating_add(m)));
        let batch = self.config.batch_size;
        let mut logs = Vec::new();
        let mut order: Option<(u64, Vec<usize>)> = None;
        while self.step < stop {
            let (epoch, b) = (self.step / bpe, (self.step % bpe) as usize);
            if order.as_ref().map(|(e, _)| *e) != Some(epoch) {
                order = Some((epoch, self.epoch_order(epoch, data.len())));
            }
            let idx = &order.as_ref().expect("order for this epoch").1;
            let (x, t) = data.batch(&idx[b * batch..((b + 1) * batch).min(idx.len())]);
            let stats = self.train_step(&x, &t)?;
            self.acc.add(&stats);
            if self.step % bpe == 0 {
                let log = self.acc.finish((self.step / bpe) as usize);
                on_epoch(&log)?;
                logs.push(log);
            }
        }
        Ok(logs)
    }
}

/// Builds a fresh trainer and runs the full schedule.
pub fn train<T: Real>(config: TrainingConfig, data: &PatchSet<T>) -> Result<(Trainer<T>, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(config)?;
    let logs = trainer.run(data, None, |_| Ok(()))?;
    Ok((trainer, logs))
}
