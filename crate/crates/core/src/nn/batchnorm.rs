use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel affine parameters and running statistics.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`,
/// with the unbiased batch variance. They start at mean 0 / variance 1 but
/// count as uninitialized until the first update (or an explicit set).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    pub(crate) tracked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// What the backward pass and the running-stat update need from a forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    mode: Mode,
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    count: usize,
}

impl<T: Real> BatchNormParams<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            tracked: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_tracked(&self) -> bool {
        self.tracked
    }

    pub fn set_running_stats(&mut self, mean: Tensor<T>, var: Tensor<T>) -> Result<()> {
        let c = self.channels();
        if mean.shape() != [c] || var.shape() != [c] {
            return Err(Error::validation("running statistics must have one value per channel"));
        }
        if var.data().iter().any(|v| *v < T::zero()) {
            return Err(Error::validation("running variance must be non-negative"));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.tracked = true;
        Ok(())
    }

    /// Folds a train-mode batch into the running statistics. Eval caches are ignored.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        let m = self.momentum;
        let n = cache.count as f64;
        for ch in 0..self.channels() {
            let unbiased = cache.batch_var[ch] * n / (n - 1.0);
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = T::of(m * rm.to_f64_lossless() + (1.0 - m) * cache.batch_mean[ch]);
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = T::of(m * rv.to_f64_lossless() + (1.0 - m) * unbiased);
        }
        self.tracked = true;
    }
}

impl<T> BatchNormCache<T> {
    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.batch_var
    }
}

/// `sum f(a_i, b_i)` in `f64` with four interleaved accumulators.
fn lane_sum<T: Real>(a: &[T], b: &[T], f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += f(x[l].to_f64_lossless(), y[l].to_f64_lossless());
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += f(x.to_f64_lossless(), y.to_f64_lossless());
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

/// Per-channel batch normalization over `[N,C,H,W]`.
///
/// Statistics are accumulated in `f64` regardless of the tensor precision.
pub fn batchnorm2d<T: Real>(
    input: &Tensor<T>,
    params: &BatchNormParams<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    input.expect_rank(4, "batchnorm2d input")?;
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    if c != params.channels() {
        return Err(Error::config(format!(
            "batchnorm2d: {} channels configured, input has {c}",
            params.channels()
        )));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::validation(
                    "batchnorm2d: train mode needs at least 2 values per channel",
                ));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let planes = || (0..n).map(move |s| &x[(s * c + ch) * plane..(s * c + ch + 1) * plane]);
                let mu = planes().map(|p| lane_sum(p, p, |v, _| v)).sum::<f64>() / count as f64;
                let sq = planes()
                    .map(|p| lane_sum(p, p, |v, _| (v - mu) * (v - mu)))
                    .sum::<f64>();
                mean[ch] = mu;
                var[ch] = sq / count as f64;
            }
            (mean, var)
        }
        Mode::Eval => {
            if !params.tracked {
                return Err(Error::UninitializedStatistics);
            }
            (
                params.running_mean.data().iter().map(|v| v.to_f64_lossless()).collect(),
                params.running_var.data().iter().map(|v| v.to_f64_lossless()).collect(),
            )
        }
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + params.eps).sqrt()).collect();
    let mut xhat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    for s in 0..n {
        for ch in 0..c {
            let range = (s * c + ch) * plane..(s * c + ch + 1) * plane;
            let (mu, is) = (T::of(mean[ch]), T::of(inv_std[ch]));
            let (g, b) = (params.gamma.data()[ch], params.beta.data()[ch]);
            let dst = xhat.data_mut()[range.clone()]
                .iter_mut()
                .zip(&mut out.data_mut()[range.clone()]);
            for ((xh, o), &v) in dst.zip(&x[range]) {
                *xh = (v - mu) * is;
                *o = g * *xh + b;
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
        },
    ))
}

/// Gradients with respect to the input, `gamma` and `beta`.
///
/// In train mode the batch statistics depend on the input; in eval mode the
/// layer is a fixed affine map.
pub fn batchnorm2d_backward<T: Real>(
    cache: &BatchNormCache<T>,
    params: &BatchNormParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, BatchNormGrads<T>)> {
    if grad_out.shape() != cache.xhat.shape() {
        return Err(Error::validation(format!(
            "batchnorm2d backward: upstream gradient {:?} does not match {:?}",
            grad_out.shape(),
            cache.xhat.shape()
        )));
    }
    let s = cache.xhat.shape();
    let [n, c, plane] = [s[0], s[1], s[2] * s[3]];
    let go = grad_out.data();
    let xh = cache.xhat.data();
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for smp in 0..n {
        for ch in 0..c {
            let range = (smp * c + ch) * plane..(smp * c + ch + 1) * plane;
            let (g, x) = (&go[range.clone()], &xh[range]);
            dbeta[ch] += lane_sum(g, g, |v, _| v);
            dgamma[ch] += lane_sum(g, x, |a, b| a * b);
        }
    }
    let mut grad_in = Tensor::zeros(grad_out.shape());
    let m = cache.count as f64;
    for smp in 0..n {
        for ch in 0..c {
            let gamma = params.gamma.data()[ch].to_f64_lossless();
            let is = cache.inv_std[ch];
            let range = (smp * c + ch) * plane..(smp * c + ch + 1) * plane;
            match cache.mode {
                Mode::Train => {
                    // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
                    let scale = gamma * is / m;
                    let (db, dg) = (dbeta[ch], dgamma[ch]);
                    let dst = &mut grad_in.data_mut()[range.clone()];
                    for ((d, g), x) in dst.iter_mut().zip(&go[range.clone()]).zip(&xh[range]) {
                        let v = m * g.to_f64_lossless() - db - x.to_f64_lossless() * dg;
                        *d = T::of(scale * v);
                    }
                }
                Mode::Eval => {
                    let scale = T::of(gamma * is);
                    for i in range {
                        grad_in.data_mut()[i] = go[i] * scale;
                    }
                }
            }
        }
    }
    let to_tensor = |v: Vec<f64>| Tensor::from_fn(&[c], |i| T::of(v[i]));
    Ok((
        grad_in,
        BatchNormGrads {
            gamma: to_tensor(dgamma),
            beta: to_tensor(dbeta),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    fn channel_stats(y: &Tensor<f64>, ch: usize) -> (f64, f64) {
        let s = y.shape();
        let plane = s[2] * s[3];
        let vals: Vec<f64> = (0..s[0])
            .flat_map(|n| y.data()[(n * s[1] + ch) * plane..(n * s[1] + ch + 1) * plane].to_vec())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var)
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // variance ~75, so eps = 1e-5 shifts the output variance by ~1.3e-7
        let x = random(&[4, 3, 5, 5], &mut rng, -10.0, 20.0);
        let p = BatchNormParams::<f64>::new(3);
        let (y, _) = batchnorm2d(&x, &p, Mode::Train).unwrap();
        for ch in 0..3 {
            let (mean, var) = channel_stats(&y, ch);
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn train_mode_output_moments_follow_gamma_and_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[3, 2, 6, 6], &mut rng, 10.0, 30.0);
        let mut p = BatchNormParams::<f64>::new(2);
        p.gamma = Tensor::from_vec(&[2], vec![-2.0, 0.5]).unwrap();
        p.beta = Tensor::from_vec(&[2], vec![1.0, -3.0]).unwrap();
        p.eps = 0.0;
        let (y, _) = batchnorm2d(&x, &p, Mode::Train).unwrap();
        for ch in 0..2 {
            let (mean, var) = channel_stats(&y, ch);
            assert!((mean - p.beta.data()[ch]).abs() < 1e-6);
            assert!((var.sqrt() - p.gamma.data()[ch].abs()).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_with_identity_statistics_is_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random(&[2, 2, 4, 4], &mut rng, -2.0, 2.0);
        let mut p = BatchNormParams::<f64>::new(2);
        p.set_running_stats(Tensor::zeros(&[2]), Tensor::full(&[2], 1.0))
            .unwrap();
        let (y, _) = batchnorm2d(&x, &p, Mode::Eval).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_before_training_is_an_error() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let p = BatchNormParams::<f64>::new(1);
        assert!(matches!(
            batchnorm2d(&x, &p, Mode::Eval),
            Err(Error::UninitializedStatistics)
        ));
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut p = BatchNormParams::<f64>::new(1);
        let (_, cache) = batchnorm2d(&x, &p, Mode::Train).unwrap();
        p.update_running(&cache);
        assert!(p.is_tracked());
        // mean 2.5, unbiased var 5/3
        assert!((p.running_mean.data()[0] - 0.25).abs() < 1e-12);
        assert!((p.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn single_value_per_channel_rejected_in_train_mode() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 1]);
        let p = BatchNormParams::<f64>::new(2);
        assert!(batchnorm2d(&x, &p, Mode::Train).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, mode) in [(0u64, Mode::Train), (1, Mode::Train), (2, Mode::Eval)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&[3, 2, 3, 4], &mut rng, -2.0, 2.0);
            let mut p = BatchNormParams::<f64>::new(2);
            p.gamma = random(&[2], &mut rng, 0.5, 1.5);
            p.beta = random(&[2], &mut rng, -1.0, 1.0);
            p.set_running_stats(random(&[2], &mut rng, -0.5, 0.5), random(&[2], &mut rng, 0.5, 2.0))
                .unwrap();
            let w = random(x.shape(), &mut rng, -1.0, 1.0);
            let loss = |x: &Tensor<f64>, p: &BatchNormParams<f64>| -> f64 {
                let (y, _) = batchnorm2d(x, p, mode).unwrap();
                y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = batchnorm2d(&x, &p, mode).unwrap();
            let (gx, gp) = batchnorm2d_backward(&cache, &p, &w).unwrap();
            let nx = central_difference(&x, 1e-5, |x| loss(x, &p));
            let ng = central_difference(&p.gamma, 1e-5, |g| {
                let mut q = p.clone();
                q.gamma = g.clone();
                loss(&x, &q)
            });
            let nb = central_difference(&p.beta, 1e-5, |b| {
                let mut q = p.clone();
                q.beta = b.clone();
                loss(&x, &q)
            });
            assert!(relative_error(&gx, &nx) < 1e-5, "{mode:?}");
            assert!(relative_error(&gp.gamma, &ng) < 1e-5);
            assert!(relative_error(&gp.beta, &nb) < 1e-5);
        }
    }
}
