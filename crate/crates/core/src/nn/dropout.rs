use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::{Real, Tensor};

/// Per-element multipliers applied in train mode: `0` or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T>(Vec<T>);

/// Inverted dropout. Eval mode (or `rate == 0`) is the identity and returns no mask.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let out = Tensor::from_fn(input.shape(), |i| input.data()[i] * mask[i]);
    Ok((out, Some(DropoutMask(mask))))
}

pub fn dropout_backward<T: Real>(mask: Option<&DropoutMask<T>>, grad_out: &Tensor<T>) -> Tensor<T> {
    match mask {
        None => grad_out.clone(),
        Some(DropoutMask(m)) => Tensor::from_fn(grad_out.shape(), |i| grad_out.data()[i] * m[i]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::from_fn(&[4, 4], |i| i as f64);
        for mode in [Mode::Train, Mode::Eval] {
            let (y, mask) = dropout(&x, 0.0, mode, &mut rng).unwrap();
            assert_eq!(y, x);
            assert!(mask.is_none());
        }
        let (y, _) = dropout(&x, 0.9, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn rate_of_one_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::zeros(&[2]);
        assert!(matches!(dropout(&x, 1.0, Mode::Train, &mut rng), Err(Error::Config(_))));
        assert!(dropout(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn expectation_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let c = 3.0;
        let x = Tensor::<f64>::full(&[n], c);
        let (y, _) = dropout(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        // each output is 0 or 2c with equal probability: std = c
        let std_err = c / (n as f64).sqrt();
        assert!((mean - c).abs() < 3.0 * std_err, "mean {mean}");
    }

    #[test]
    fn backward_reuses_the_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::full(&[64], 1.0);
        let (y, mask) = dropout(&x, 0.3, Mode::Train, &mut rng).unwrap();
        let g = dropout_backward(mask.as_ref(), &Tensor::full(&[64], 1.0));
        assert_eq!(g, y);
    }
}
