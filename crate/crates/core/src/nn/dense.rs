use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// Fully connected layer, `weight` is `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn dims<T: Real>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "dense input")?;
    params.weight.expect_rank(2, "dense weight")?;
    let (n, d) = (input.dim(0), input.dim(1));
    let (wd, m) = (params.weight.dim(0), params.weight.dim(1));
    if wd != d {
        return Err(Error::config(format!("dense: weight expects {wd} inputs, got {d}")));
    }
    if params.bias.shape() != [m] {
        return Err(Error::config(format!(
            "dense: bias shape {:?} does not match {m} outputs",
            params.bias.shape()
        )));
    }
    Ok((n, d, m))
}

/// `[N,D] -> [N,M]`, `y = x W + b` per row.
pub fn dense<T: Real>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<Tensor<T>> {
    let (n, d, m) = dims(input, params)?;
    let mut out = Tensor::zeros(&[n, m]);
    for row in out.data_mut().chunks_exact_mut(m) {
        row.copy_from_slice(params.bias.data());
    }
    matmul(
        input.data(),
        false,
        params.weight.data(),
        false,
        out.data_mut(),
        n,
        d,
        m,
        true,
    );
    Ok(out)
}

pub fn dense_backward<T: Real>(
    input: &Tensor<T>,
    params: &DenseParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, DenseGrads<T>)> {
    let (n, d, m) = dims(input, params)?;
    if grad_out.shape() != [n, m] {
        return Err(Error::validation(format!(
            "dense backward: upstream gradient {:?} does not match [{n}, {m}]",
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(&[n, d]);
    matmul(
        grad_out.data(),
        false,
        params.weight.data(),
        true,
        grad_in.data_mut(),
        n,
        m,
        d,
        false,
    );
    let mut grad_w = Tensor::zeros(&[d, m]);
    matmul(
        input.data(),
        true,
        grad_out.data(),
        false,
        grad_w.data_mut(),
        d,
        n,
        m,
        false,
    );
    let mut grad_b = Tensor::zeros(&[m]);
    for row in grad_out.data().chunks_exact(m) {
        for (b, &g) in grad_b.data_mut().iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok((
        grad_in,
        DenseGrads {
            weight: grad_w,
            bias: grad_b,
        },
    ))
}
