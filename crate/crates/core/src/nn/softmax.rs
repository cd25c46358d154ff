use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Row-wise softmax over `[N,K]`, stabilized by subtracting the row max.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.expect_rank(2, "softmax logits")?;
    let k = logits.dim(1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product: `dz_j = g_j * (u_j - sum_k g_k u_k)`, which is
/// `sum_k u_k * g_k * (delta_kj - g_j)` with `u` the upstream gradient.
pub fn softmax_backward<T: Real>(probs: &Tensor<T>, grad_probs: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(probs.shape(), grad_probs.shape());
    let k = probs.dim(1);
    let mut out = Tensor::zeros(probs.shape());
    let rows = probs.data().chunks_exact(k).zip(grad_probs.data().chunks_exact(k));
    for ((g, u), dz) in rows.zip(out.data_mut().chunks_exact_mut(k)) {
        let dot: T = g.iter().zip(u).map(|(&a, &b)| a * b).sum();
        for j in 0..k {
            dz[j] = g[j] * (u[j] - dot);
        }
    }
    out
}
