use crate::tensor::{Real, Tensor};

/// `x` for `x >= 0`, `alpha * (exp(x) - 1)` otherwise.
pub fn elu<T: Real>(input: &Tensor<T>, alpha: T) -> Tensor<T> {
    input.map(|x| {
        if x >= T::zero() {
            x
        } else {
            alpha * (x.exp() - T::one())
        }
    })
}

/// Same as [`elu_backward`] but from the layer output: on the negative branch
/// the derivative `alpha * exp(x)` equals `output + alpha`.
pub(crate) fn elu_backward_from_output<T: Real>(output: &Tensor<T>, alpha: T, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(output.shape(), grad_out.shape());
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y >= T::zero() { g } else { (y + alpha) * g })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("same shape")
}

pub fn elu_backward<T: Real>(input: &Tensor<T>, alpha: T, grad_out: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(input.shape(), grad_out.shape());
    Tensor::from_fn(input.shape(), |i| {
        let x = input.data()[i];
        let d = if x >= T::zero() { T::one() } else { alpha * x.exp() };
        d * grad_out.data()[i]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_on_non_negatives() {
        let x = Tensor::<f64>::from_vec(&[2], vec![0.0, 2.0]).unwrap();
        assert_eq!(elu(&x, 1.0).data(), &[0.0, 2.0]);
    }

    #[test]
    fn negative_branch() {
        let x = Tensor::<f64>::from_vec(&[1], vec![-1.0]).unwrap();
        let y = elu(&x, 1.0).data()[0];
        assert!((y - (-0.632_120_558_828_557_7)).abs() < 1e-12);
        assert!((y - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for alpha in [1.0, 0.7] {
            // keep inputs away from the kink at 0
            let x = Tensor::<f64>::from_fn(&[3, 17], |_| {
                let v: f64 = rng.gen_range(0.05..2.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            });
            let w = Tensor::from_fn(x.shape(), |_| rng.gen_range(-1.0..1.0));
            let g = elu_backward(&x, alpha, &w);
            let n = central_difference(&x, 1e-5, |x| {
                elu(x, alpha).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            });
            assert!(relative_error(&g, &n) < 1e-7);
            let from_out = elu_backward_from_output(&elu(&x, alpha), alpha, &w);
            assert!(relative_error(&from_out, &g) < 1e-12);
        }
    }
}
