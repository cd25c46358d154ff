//! Finite-difference audit of every layer, the composed networks and the
//! mixture gradients, run in `f64` over a range of seeds.
//!
//! Layer checks use the coordinate-wise relative error. The composed networks
//! sample a few coordinates per tensor and compare them as vectors, because
//! single coordinates there are often at the roundoff floor of the difference
//! quotient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{
    central_difference, grad_check_piecewise, relative_error, GradCheckOptions, GradCheckReport, DEFAULT_STEP,
    DEFAULT_THRESHOLD,
};
use crate::model::{
    build_fc_gating, build_moc, build_ordinary, ConvSpec, ExpertNetConfig, GatingNetConfig, StackConfig,
};
use crate::moe::{self, BatchPrediction};
use crate::nn::{self, BatchNormParams, Conv2dParams, DenseParams, Mode};
use crate::tensor::Tensor;

/// Threshold of the checks on the quadratic mixture losses, where central
/// differences are exact up to roundoff.
pub const QUADRATIC_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub seed: u64,
    pub seeds: usize,
    /// Adds the mixture-gradient identities and the gating chain.
    pub full: bool,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            seed: 0,
            seeds: 20,
            full: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditCheck {
    pub name: String,
    /// Worst relative error over all seeds.
    pub max_rel_error: f64,
    pub threshold: f64,
    /// A deliberately corrupted gradient that the oracle must reject.
    pub negative_control: bool,
    /// Sampled parameter coordinates, for the composed networks.
    pub coords: usize,
    /// Sampled coordinates whose probes changed a pooling argmax.
    pub skipped: usize,
}

impl AuditCheck {
    pub fn passed(&self) -> bool {
        if 2 * self.skipped > self.coords {
            return false;
        }
        if self.negative_control {
            self.max_rel_error >= self.threshold
        } else {
            self.max_rel_error < self.threshold
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub seeds: usize,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(AuditCheck::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AuditCheck> {
        self.checks.iter().filter(|c| !c.passed())
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = match (c.passed(), c.negative_control) {
                (true, false) => "pass",
                (false, false) => "FAIL",
                (true, true) => "pass (negative control failed as intended)",
                (false, true) => "FAIL (negative control was not detected)",
            };
            out.push_str(&format!(
                "{:<38} max rel err {:.3e} (threshold {:.0e}) {status}",
                c.name, c.max_rel_error, c.threshold
            ));
            if c.coords > 0 {
                out.push_str(&format!(
                    ", {} of {} coordinates skipped at pooling ties",
                    c.skipped, c.coords
                ));
            }
            out.push('\n');
        }
        out
    }
}

struct Collector {
    checks: Vec<AuditCheck>,
}

impl Collector {
    fn record(&mut self, name: &str, err: f64, threshold: f64, negative_control: bool) {
        match self.checks.iter_mut().find(|c| c.name == name) {
            Some(c) => c.max_rel_error = c.max_rel_error.max(err),
            None => self.checks.push(AuditCheck {
                name: name.to_string(),
                max_rel_error: err,
                threshold,
                negative_control,
                coords: 0,
                skipped: 0,
            }),
        }
    }

    fn network(&mut self, name: &str, r: &GradCheckReport) {
        self.layer(name, r.max_norm_error());
        let c = self.checks.iter_mut().find(|c| c.name == name).expect("just recorded");
        c.coords += r.params.iter().map(|p| p.coords).sum::<usize>();
        c.skipped += r.skipped();
    }

    fn layer(&mut self, name: &str, err: f64) {
        self.record(name, err, DEFAULT_THRESHOLD, false);
    }
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Values in `[-1, 1)` with every magnitude at least `gap` away from zero.
fn off_zero(shape: &[usize], rng: &mut ChaCha8Rng, gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn conv_checks(c: &mut Collector, rng: &mut ChaCha8Rng) -> Result<()> {
    let h = DEFAULT_STEP;
    let stride = rng.gen_range(1..=2);
    let x = uniform(&[2, 2, 7, 6], rng, -1.0, 1.0);
    let p = Conv2dParams {
        kernels: uniform(&[3, 2, 3, 3], rng, -1.0, 1.0),
        bias: Some(uniform(&[3], rng, -1.0, 1.0)),
    };
    let y = nn::conv2d(&x, &p, stride)?;
    let w = uniform(y.shape(), rng, -1.0, 1.0);
    let (gx, gp) = nn::conv2d_backward(&x, &p, stride, &w)?;
    let loss = |x: &Tensor<f64>, p: &Conv2dParams<f64>| dot(&nn::conv2d(x, p, stride).expect("conv"), &w);
    c.layer(
        "conv2d input",
        relative_error(&gx, &central_difference(&x, h, |x| loss(x, &p))),
    );
    let nk = central_difference(&p.kernels, h, |k| {
        loss(
            &x,
            &Conv2dParams {
                kernels: k.clone(),
                bias: p.bias.clone(),
            },
        )
    });
    c.layer("conv2d kernels", relative_error(&gp.kernels, &nk));
    let bias = p.bias.clone().expect("bias");
    let nb = central_difference(&bias, h, |b| {
        loss(
            &x,
            &Conv2dParams {
                kernels: p.kernels.clone(),
                bias: Some(b.clone()),
            },
        )
    });
    c.layer("conv2d bias", relative_error(gp.bias.as_ref().expect("bias grad"), &nb));
    let corrupted = gp.kernels.map(|v| v * 1.001);
    c.record(
        "negative control (conv kernels x1.001)",
        relative_error(&corrupted, &nk),
        DEFAULT_THRESHOLD,
        true,
    );
    Ok(())
}

fn batchnorm_checks(c: &mut Collector, rng: &mut ChaCha8Rng) -> Result<()> {
    let h = DEFAULT_STEP;
    let x = uniform(&[3, 2, 4, 4], rng, -2.0, 2.0);
    let mut p = BatchNormParams::new(2);
    p.gamma = uniform(&[2], rng, 0.5, 1.5);
    p.beta = uniform(&[2], rng, -0.5, 0.5);
    p.set_running_stats(uniform(&[2], rng, -0.5, 0.5), uniform(&[2], rng, 0.5, 2.0))?;
    let w = uniform(x.shape(), rng, -1.0, 1.0);
    for (mode, label) in [(Mode::Train, "train"), (Mode::Eval, "eval")] {
        let (_, cache) = nn::batchnorm2d(&x, &p, mode)?;
        let (gx, gp) = nn::batchnorm2d_backward(&cache, &p, &w)?;
        let loss = |x: &Tensor<f64>, p: &BatchNormParams<f64>| dot(&nn::batchnorm2d(x, p, mode).expect("bn").0, &w);
        c.layer(
            &format!("batchnorm ({label}) input"),
            relative_error(&gx, &central_difference(&x, h, |x| loss(x, &p))),
        );
        let ng = central_difference(&p.gamma, h, |g| {
            let mut q = p.clone();
            q.gamma = g.clone();
            loss(&x, &q)
        });
        c.layer(&format!("batchnorm ({label}) gamma"), relative_error(&gp.gamma, &ng));
        let nb = central_difference(&p.beta, h, |b| {
            let mut q = p.clone();
            q.beta = b.clone();
            loss(&x, &q)
        });
        c.layer(&format!("batchnorm ({label}) beta"), relative_error(&gp.beta, &nb));
    }
    Ok(())
}

fn pointwise_checks(c: &mut Collector, rng: &mut ChaCha8Rng) -> Result<()> {
    let h = DEFAULT_STEP;
    let alpha = rng.gen_range(0.5..1.5);
    let x = off_zero(&[3, 11], rng, 0.05);
    let w = uniform(x.shape(), rng, -1.0, 1.0);
    let g = nn::elu_backward(&x, alpha, &w);
    c.layer(
        "elu",
        relative_error(&g, &central_difference(&x, h, |x| dot(&nn::elu(x, alpha), &w))),
    );

    // Distinct values 0.01 apart keep every window's argmax stable under the probe.
    let k = rng.gen_range(2..=3);
    let mut values: Vec<f64> = (0..2 * 2 * 6 * 7).map(|i| i as f64 * 0.01).collect();
    rand::seq::SliceRandom::shuffle(values.as_mut_slice(), rng);
    let x = Tensor::from_vec(&[2, 2, 6, 7], values)?;
    let y = nn::maxpool2d(&x, k)?;
    let w = uniform(y.shape(), rng, -1.0, 1.0);
    let g = nn::maxpool2d_backward(&x, k, &w)?;
    let n = central_difference(&x, h, |x| dot(&nn::maxpool2d(x, k).expect("pool"), &w));
    c.layer("maxpool", relative_error(&g, &n));

    let x = uniform(&[4, 5], rng, -1.0, 1.0);
    let p = DenseParams {
        weight: uniform(&[5, 3], rng, -1.0, 1.0),
        bias: uniform(&[3], rng, -1.0, 1.0),
    };
    let w = uniform(&[4, 3], rng, -1.0, 1.0);
    let (gx, gp) = nn::dense_backward(&x, &p, &w)?;
    let loss = |x: &Tensor<f64>, p: &DenseParams<f64>| dot(&nn::dense(x, p).expect("dense"), &w);
    c.layer(
        "dense input",
        relative_error(&gx, &central_difference(&x, h, |x| loss(x, &p))),
    );
    let nw = central_difference(&p.weight, h, |v| {
        loss(
            &x,
            &DenseParams {
                weight: v.clone(),
                bias: p.bias.clone(),
            },
        )
    });
    c.layer("dense weight", relative_error(&gp.weight, &nw));
    let nb = central_difference(&p.bias, h, |v| {
        loss(
            &x,
            &DenseParams {
                weight: p.weight.clone(),
                bias: v.clone(),
            },
        )
    });
    c.layer("dense bias", relative_error(&gp.bias, &nb));

    let x = uniform(&[4, 6], rng, -1.0, 1.0);
    let w = uniform(x.shape(), rng, -1.0, 1.0);
    let mask_seed = rng.gen::<u64>();
    let drop =
        |x: &Tensor<f64>| nn::dropout(x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed)).expect("dropout");
    let (_, mask) = drop(&x);
    let g = nn::dropout_backward(mask.as_ref(), &w);
    c.layer(
        "dropout",
        relative_error(&g, &central_difference(&x, h, |x| dot(&drop(x).0, &w))),
    );

    let z = uniform(&[3, 5], rng, -2.0, 2.0);
    let w = uniform(z.shape(), rng, -1.0, 1.0);
    let g = nn::softmax_backward(&nn::softmax(&z)?, &w);
    let n = central_difference(&z, h, |z| dot(&nn::softmax(z).expect("softmax"), &w));
    c.layer("softmax", relative_error(&g, &n));
    Ok(())
}

fn stack(filters: [usize; 2]) -> StackConfig {
    StackConfig {
        input_channels: 1,
        input_size: 14,
        conv: [
            ConvSpec {
                filters: filters[0],
                kernel: 3,
            },
            ConvSpec {
                filters: filters[1],
                kernel: 3,
            },
        ],
        pools: [2, 2],
        elu_alpha: 1.0,
    }
}

fn network_checks(c: &mut Collector, rng: &mut ChaCha8Rng, seed: u64) -> Result<()> {
    let expert_cfg = ExpertNetConfig { stack: stack([2, 3]) };
    let gate_cfg = GatingNetConfig {
        stack: stack([3, 4]),
        hidden: 6,
        dropout: 0.5,
    };
    let opts = GradCheckOptions {
        max_coords: Some(8),
        seed,
        ..GradCheckOptions::default()
    };
    let n = 3;
    let x = uniform(&[n, 1, 14, 14], rng, 0.0, 1.0);
    let t = uniform(&[n], rng, 0.0, 5.0);
    let lambda = rng.gen_range(0.0..2.0);
    let k = 3;
    let sq_err = |y: &Tensor<f64>| {
        y.data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64
    };

    let mut ord = build_ordinary::<f64>(&expert_cfg, seed)?;
    let (y, cache) = ord.expert.forward(&x, Mode::Train)?;
    let gy = Tensor::from_fn(&[n], |i| 2.0 / n as f64 * (y.data()[i] - t.data()[i]));
    let grads = ord.expert.backward(&x, &cache, &gy)?;
    let r = grad_check_piecewise(&mut ord, &grads, &opts, |m| {
        let (y, cache) = m.expert.forward(&x, Mode::Train).expect("forward");
        (sq_err(&y), cache.pool_selection().collect())
    })?;
    c.network("ordinary cnn (expert network)", &r);

    let mut moc = build_moc::<f64>(&expert_cfg, &gate_cfg, k, lambda, seed)?;
    let drop_seed = rng.gen::<u64>();
    let gate_rng = || ChaCha8Rng::seed_from_u64(drop_seed);
    let (e, caches) = moc.forward_experts(&x, Mode::Train)?;
    let (g, gate_cache) = moc.gate.forward(&x, Mode::Train, &mut gate_rng())?;
    let pred = BatchPrediction::new(e.clone(), g.clone(), t.clone())?;
    let ge = moe::grad_expert_outputs(&pred);
    let mut expert_grads = Vec::new();
    for (j, (net, cache)) in moc.experts.iter().zip(&caches).enumerate() {
        let col = Tensor::from_fn(&[n], |i| ge.data()[i * k + j]);
        expert_grads.extend(net.backward(&x, cache, &col)?);
    }
    let mut experts = moc.experts.clone();
    let r = grad_check_piecewise(experts.as_mut_slice(), &expert_grads, &opts, |nets| {
        let outs: Vec<_> = nets
            .iter()
            .map(|net| net.forward(&x, Mode::Train).expect("forward"))
            .collect();
        let e = Tensor::from_fn(&[n, k], |i| outs[i % k].0.data()[i / k]);
        let loss = moe::expert_loss(&BatchPrediction::new(e, g.clone(), t.clone()).expect("prediction"));
        (
            loss,
            outs.iter().flat_map(|(_, cache)| cache.pool_selection()).collect(),
        )
    })?;
    c.network("mixture experts (expert loss)", &r);

    let gate_grads = moc
        .gate
        .backward(&x, &gate_cache, &moe::grad_gate_probs(&pred, lambda)?)?;
    let r = grad_check_piecewise(&mut moc.gate, &gate_grads, &opts, |gate| {
        let (p, cache) = gate.forward(&x, Mode::Train, &mut gate_rng()).expect("gate");
        let loss = moe::gating_loss(
            &BatchPrediction::new(e.clone(), p, t.clone()).expect("prediction"),
            lambda,
        )
        .expect("loss")
        .total;
        (loss, cache.pool_selection().collect())
    })?;
    c.network("gating network (gating loss)", &r);

    let mut fc = build_fc_gating::<f64>(&expert_cfg, k, seed)?;
    let (e, caches) = fc.forward_experts(&x, Mode::Train)?;
    let y = fc.combine(&e)?;
    let gy = Tensor::from_fn(&[n], |i| 2.0 / n as f64 * (y.data()[i] - t.data()[i]));
    let (ge, comb) = fc.combine_backward(&e, &gy)?;
    let mut grads = Vec::new();
    for (j, (net, cache)) in fc.experts.iter().zip(&caches).enumerate() {
        grads.extend(net.backward(&x, cache, &Tensor::from_fn(&[n], |i| ge.data()[i * k + j]))?);
    }
    grads.push(comb.weight);
    grads.push(comb.bias);
    let r = grad_check_piecewise(&mut fc, &grads, &opts, |m| {
        let (e, caches) = m.forward_experts(&x, Mode::Train).expect("forward");
        let loss = sq_err(&m.combine(&e).expect("combine"));
        (loss, caches.iter().flat_map(|cache| cache.pool_selection()).collect())
    })?;
    c.network("fc-layer gating", &r);
    Ok(())
}

fn mixture_checks(c: &mut Collector, rng: &mut ChaCha8Rng) -> Result<()> {
    let n = rng.gen_range(1..6);
    let k = rng.gen_range(1..7);
    let lambda = [0.0, 0.1, 1.0, 10.0][rng.gen_range(0..4)];
    let z = uniform(&[n, k], rng, -2.0, 2.0);
    let mut g = nn::softmax(&z)?;
    if k > 1 {
        // One expert switched off entirely in the first row.
        let dead = rng.gen_range(0..k);
        let row = &mut g.data_mut()[..k];
        let lost = row[dead];
        row[dead] = 0.0;
        for v in row.iter_mut() {
            *v /= 1.0 - lost;
        }
    }
    let e = uniform(&[n, k], rng, -5.0, 15.0);
    let t = uniform(&[n], rng, 0.0, 10.0);
    let pred = BatchPrediction::new(e.clone(), g.clone(), t.clone())?;

    let analytic = moe::grad_expert_outputs(&pred);
    let closed = Tensor::from_fn(&[n, k], |i| {
        2.0 / n as f64 * g.data()[i] * (pred.y.data()[i / k] - t.data()[i / k])
    });
    let identity_gap = analytic
        .data()
        .iter()
        .zip(closed.data())
        .map(|(a, b)| if a == b { 0.0 } else { f64::INFINITY })
        .fold(0.0, f64::max);
    let zero_gate = analytic
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, gv)| if *gv == 0.0 && *a != 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    // Both mixture losses are quadratic in e and g: a wide step is exact and
    // keeps roundoff out of the comparison.
    let numeric = central_difference(&e, 1e-2, |x| {
        moe::expert_loss(&BatchPrediction::new(x.clone(), g.clone(), t.clone()).expect("prediction"))
    });
    c.record(
        "expert-output gradient: closed form",
        identity_gap,
        QUADRATIC_THRESHOLD,
        false,
    );
    c.record(
        "expert-output gradient: zero gate",
        zero_gate,
        QUADRATIC_THRESHOLD,
        false,
    );
    c.record(
        "expert-output gradient vs FD",
        relative_error(&analytic, &numeric),
        QUADRATIC_THRESHOLD,
        false,
    );

    let raw = Tensor::from_fn(&[n, k], |i| g.data()[i] + rng.gen_range(-0.2..0.2));
    let off = BatchPrediction::new(e.clone(), raw.clone(), t.clone())?;
    let numeric = central_difference(&raw, 1e-2, |x| {
        moe::gating_loss(
            &BatchPrediction::new(e.clone(), x.clone(), t.clone()).expect("prediction"),
            lambda,
        )
        .expect("loss")
        .total
    });
    c.record(
        "gate-output gradient vs FD",
        relative_error(&moe::grad_gate_probs(&off, lambda)?, &numeric),
        QUADRATIC_THRESHOLD,
        false,
    );

    let zpred = BatchPrediction::new(e.clone(), nn::softmax(&z)?, t.clone())?;
    let chain = nn::softmax_backward(&zpred.g, &moe::grad_gate_probs(&zpred, lambda)?);
    let numeric = central_difference(&z, DEFAULT_STEP, |z| {
        let p = BatchPrediction::new(e.clone(), nn::softmax(z).expect("softmax"), t.clone()).expect("prediction");
        moe::gating_loss(&p, lambda).expect("loss").total
    });
    c.layer("gating chain through softmax", relative_error(&chain, &numeric));
    Ok(())
}

/// Runs every check for `seeds` consecutive seeds starting at `seed`.
pub fn audit(options: &AuditOptions) -> Result<AuditReport> {
    let mut c = Collector { checks: Vec::new() };
    for s in 0..options.seeds as u64 {
        let seed = options.seed.wrapping_add(s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        conv_checks(&mut c, &mut rng)?;
        batchnorm_checks(&mut c, &mut rng)?;
        pointwise_checks(&mut c, &mut rng)?;
        network_checks(&mut c, &mut rng, seed)?;
        if options.full {
            mixture_checks(&mut c, &mut rng)?;
        }
    }
    Ok(AuditReport {
        seeds: options.seeds,
        checks: c.checks,
    })
}
