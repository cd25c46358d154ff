//! Mixture combination, the expert and gating losses, and their gradients.
//!
//! With `y_n = sum_k g_nk e_nk`:
//!
//! * expert loss `L_e = (1/N) sum_n (t_n - y_n)^2`
//! * gating loss `L_g = (1/N) sum_n [ (t_n - y_n)^2 + (lambda/K) sum_k (g_nk - mu_n)^2 ]`
//!   where `mu_n` is the mean of row `g_n`.
//!
//! Experts are updated from `dL_e/de` with `g` held constant; the gate from
//! `dL_g/dg` with `e` held constant. `lambda` therefore never reaches expert
//! parameters.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Expert outputs, gate probabilities, mixture predictions and targets for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPrediction<T> {
    pub e: Tensor<T>,
    pub g: Tensor<T>,
    pub y: Tensor<T>,
    pub t: Tensor<T>,
}

impl<T: Real> BatchPrediction<T> {
    /// Computes `y` from `g` and `e`.
    pub fn new(e: Tensor<T>, g: Tensor<T>, t: Tensor<T>) -> Result<Self> {
        let y = combine(&g, &e)?;
        if t.shape() != [e.dim(0)] {
            return Err(Error::validation(format!(
                "targets {:?} do not match {} samples",
                t.shape(),
                e.dim(0)
            )));
        }
        Ok(BatchPrediction { e, g, y, t })
    }

    pub fn n(&self) -> usize {
        self.e.dim(0)
    }

    pub fn k(&self) -> usize {
        self.e.dim(1)
    }

    fn residual(&self, n: usize) -> T {
        self.y.data()[n] - self.t.data()[n]
    }

    /// Checks that each gate row is a probability vector within `tol`.
    pub fn validate_gate_rows(&self, tol: f64) -> Result<()> {
        for (n, row) in self.g.data().chunks_exact(self.k()).enumerate() {
            let sum: f64 = row.iter().map(|v| v.to_f64_lossless()).sum();
            if row.iter().any(|v| *v < T::zero()) || (sum - 1.0).abs() > tol {
                return Err(Error::validation(format!(
                    "gate row {n} is not a probability vector (sum {sum})"
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_lambda(lambda: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::config(format!(
            "lambda must be a finite value >= 0, got {lambda}"
        )));
    }
    Ok(())
}

/// Gating loss split into its two terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingLossBreakdown {
    pub mse: f64,
    /// `(1/N) sum_n (lambda/K) sum_k (g_nk - mu_n)^2`
    pub penalty: f64,
    /// Per-sample gate means.
    pub mu: Vec<f64>,
    pub total: f64,
}

/// `y_n = sum_k g_nk e_nk`.
pub fn combine<T: Real>(g: &Tensor<T>, e: &Tensor<T>) -> Result<Tensor<T>> {
    e.expect_rank(2, "expert outputs")?;
    if g.shape() != e.shape() {
        return Err(Error::validation(format!(
            "gate {:?} and expert outputs {:?} differ in shape",
            g.shape(),
            e.shape()
        )));
    }
    let k = e.dim(1);
    let y = g
        .data()
        .chunks_exact(k)
        .zip(e.data().chunks_exact(k))
        .map(|(gr, er)| {
            let mut acc = T::zero();
            for (&a, &b) in gr.iter().zip(er) {
                acc += a * b;
            }
            acc
        })
        .collect();
    Tensor::from_vec(&[e.dim(0)], y)
}

/// `(1/N) sum_n (t_n - y_n)^2`, accumulated in `f64`.
pub fn expert_loss<T: Real>(pred: &BatchPrediction<T>) -> f64 {
    let n = pred.n();
    (0..n)
        .map(|i| {
            let r = pred.residual(i).to_f64_lossless();
            r * r
        })
        .sum::<f64>()
        / n as f64
}

/// Per-sample variance term `(lambda/K) sum_k (g_k - mu)^2` of one gate row.
pub fn row_penalty(row: &[f64], lambda: f64) -> f64 {
    let k = row.len() as f64;
    let mu = row.iter().sum::<f64>() / k;
    lambda / k * row.iter().map(|g| (g - mu) * (g - mu)).sum::<f64>()
}

pub fn gating_loss<T: Real>(pred: &BatchPrediction<T>, lambda: f64) -> Result<GatingLossBreakdown> {
    validate_lambda(lambda)?;
    let (n, k) = (pred.n(), pred.k());
    let mut mu = Vec::with_capacity(n);
    let mut penalty = 0.0;
    let mut row = vec![0.0; k];
    for gr in pred.g.data().chunks_exact(k) {
        for (dst, v) in row.iter_mut().zip(gr) {
            *dst = v.to_f64_lossless();
        }
        mu.push(row.iter().sum::<f64>() / k as f64);
        penalty += row_penalty(&row, lambda);
    }
    let mse = expert_loss(pred);
    let penalty = penalty / n as f64;
    Ok(GatingLossBreakdown {
        mse,
        penalty,
        mu,
        total: mse + penalty,
    })
}

/// `dL_e/de_nk = (2/N) g_nk (y_n - t_n)`, with `g` treated as constant.
pub fn grad_expert_outputs<T: Real>(pred: &BatchPrediction<T>) -> Tensor<T> {
    let (n, k) = (pred.n(), pred.k());
    let scale = T::of(2.0 / n as f64);
    Tensor::from_fn(&[n, k], |i| scale * pred.g.data()[i] * pred.residual(i / k))
}

/// `dL_g/dg_nk = (2/N) [ e_nk (y_n - t_n) + (lambda/K) (g_nk - mu_n) ]`, with `e`
/// treated as constant.
///
/// The `d mu / d g` contribution vanishes because `sum_k (g_nk - mu_n) = 0`
/// for any row, so the formula holds off the simplex as well.
pub fn grad_gate_probs<T: Real>(pred: &BatchPrediction<T>, lambda: f64) -> Result<Tensor<T>> {
    validate_lambda(lambda)?;
    let (n, k) = (pred.n(), pred.k());
    let scale = T::of(2.0 / n as f64);
    let lk = T::of(lambda / k as f64);
    let mut out = Tensor::zeros(&[n, k]);
    for (i, (dst, (gr, er))) in out
        .data_mut()
        .chunks_exact_mut(k)
        .zip(pred.g.data().chunks_exact(k).zip(pred.e.data().chunks_exact(k)))
        .enumerate()
    {
        let mu = T::of(gr.iter().map(|v| v.to_f64_lossless()).sum::<f64>() / k as f64);
        let r = pred.residual(i);
        for j in 0..k {
            dst[j] = scale * (er[j] * r + lk * (gr[j] - mu));
        }
    }
    Ok(out)
}

/// Shannon entropy (natural log) of a probability vector; `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    0.0 - p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    fn t2(rows: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[rows, v.len() / rows], v.to_vec()).unwrap()
    }

    #[test]
    fn combine_one_hot_selects() {
        let g = t2(1, &[0.0, 1.0, 0.0]);
        let e = t2(1, &[3.0, -7.5, 2.0]);
        assert_eq!(combine(&g, &e).unwrap().data(), &[-7.5]);
    }

    #[test]
    fn combine_by_hand() {
        let y = combine(&t2(1, &[0.3, 0.7]), &t2(1, &[10.0, 20.0])).unwrap();
        assert!((y.data()[0] - 17.0).abs() < 1e-12);
    }

    #[test]
    fn combine_is_linear_in_e() {
        let g = t2(2, &[0.2, 0.8, 0.5, 0.5]);
        let e = t2(2, &[1.0, 2.0, -3.0, 4.0]);
        let a = 2.5;
        let scaled = e.map(|v| a * v);
        let (y, ya) = (combine(&g, &e).unwrap(), combine(&g, &scaled).unwrap());
        for (p, q) in y.data().iter().zip(ya.data()) {
            assert!((a * p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_shape_mismatch() {
        assert!(matches!(
            combine(&t2(1, &[0.5, 0.5]), &t2(1, &[1.0, 2.0, 3.0])),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn expert_loss_by_hand() {
        let pred = BatchPrediction::new(t2(2, &[3.0, 5.0]), t2(2, &[1.0, 1.0]), t1(&[1.0, 5.0])).unwrap();
        assert_eq!(expert_loss(&pred), 2.0);
        let perfect = BatchPrediction::new(t2(2, &[3.0, 5.0]), t2(2, &[1.0, 1.0]), t1(&[3.0, 5.0])).unwrap();
        assert_eq!(expert_loss(&perfect), 0.0);
    }

    #[test]
    fn expert_loss_is_quadratic_in_residuals() {
        let t = t1(&[1.0, 2.0, -1.0]);
        let e = t2(3, &[1.5, 3.0, 0.0]);
        let c = 3.0;
        let scaled_e = Tensor::from_fn(&[3, 1], |i| t.data()[i] + c * (e.data()[i] - t.data()[i]));
        let g = t2(3, &[1.0, 1.0, 1.0]);
        let base = expert_loss(&BatchPrediction::new(e, g.clone(), t.clone()).unwrap());
        let scaled = expert_loss(&BatchPrediction::new(scaled_e, g, t).unwrap());
        assert!((scaled - c * c * base).abs() < 1e-12);
    }

    #[test]
    fn uniform_rows_have_no_penalty() {
        let pred = BatchPrediction::new(t2(1, &[1.0; 4]), t2(1, &[0.25; 4]), t1(&[3.0])).unwrap();
        let b = gating_loss(&pred, 7.0).unwrap();
        assert_eq!(b.penalty, 0.0);
        assert_eq!(b.total, b.mse);
        assert_eq!(b.mu, vec![0.25]);
    }

    #[test]
    fn one_hot_penalty_k10() {
        let mut g = vec![0.0; 10];
        g[3] = 1.0;
        let pred = BatchPrediction::new(t2(1, &[0.0; 10]), t2(1, &g), t1(&[0.0])).unwrap();
        for lambda in [0.0, 1.0, 2.5] {
            let b = gating_loss(&pred, lambda).unwrap();
            assert!((b.penalty - 0.09 * lambda).abs() < 1e-12);
        }
    }

    #[test]
    fn two_expert_penalty() {
        let pred = BatchPrediction::new(t2(1, &[0.0, 0.0]), t2(1, &[0.75, 0.25]), t1(&[0.0])).unwrap();
        let b = gating_loss(&pred, 3.0).unwrap();
        assert!((b.penalty - 0.0625 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let pred = BatchPrediction::new(t2(1, &[0.0, 0.0]), t2(1, &[0.5, 0.5]), t1(&[0.0])).unwrap();
        assert!(matches!(gating_loss(&pred, -1.0), Err(Error::Config(_))));
        assert!(grad_gate_probs(&pred, -1.0).is_err());
    }

    #[test]
    fn expert_gradient_by_hand() {
        let pred = BatchPrediction::new(t2(1, &[10.0, 20.0]), t2(1, &[0.3, 0.7]), t1(&[15.0])).unwrap();
        let g = grad_expert_outputs(&pred);
        assert!((g.data()[0] - 1.2).abs() < 1e-12);
        assert!((g.data()[1] - 2.8).abs() < 1e-12);
    }

    #[test]
    fn unselected_experts_get_no_gradient() {
        let pred = BatchPrediction::new(
            t2(2, &[1.0, 2.0, 3.0, 4.0]),
            t2(2, &[0.0, 1.0, 0.6, 0.4]),
            t1(&[0.0, 9.0]),
        )
        .unwrap();
        assert_eq!(grad_expert_outputs(&pred).data()[0], 0.0);
    }

    #[test]
    fn zero_residual_zero_gradients() {
        let pred = BatchPrediction::new(t2(1, &[2.0, 2.0]), t2(1, &[0.5, 0.5]), t1(&[2.0])).unwrap();
        assert!(grad_expert_outputs(&pred).data().iter().all(|&v| v == 0.0));
        assert!(grad_gate_probs(&pred, 5.0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn penalty_gradient_by_hand() {
        // zero residual: y = 0.75 * 4 + 0.25 * 4 = 4
        let pred = BatchPrediction::new(t2(1, &[4.0, 4.0]), t2(1, &[0.75, 0.25]), t1(&[4.0])).unwrap();
        let g = grad_gate_probs(&pred, 1.0).unwrap();
        assert!((g.data()[0] - 0.25).abs() < 1e-12);
        assert!((g.data()[1] + 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_expert_reduces_to_regression() {
        let pred =
            BatchPrediction::new(t2(3, &[1.0, 4.0, -2.0]), t2(3, &[1.0, 1.0, 1.0]), t1(&[0.5, 4.0, 1.0])).unwrap();
        let g = grad_expert_outputs(&pred);
        for i in 0..3 {
            let expected = 2.0 * (pred.y.data()[i] - pred.t.data()[i]) / 3.0;
            assert!((g.data()[i] - expected).abs() < 1e-15);
        }
        assert_eq!(gating_loss(&pred, 100.0).unwrap().penalty, 0.0);
    }
}
