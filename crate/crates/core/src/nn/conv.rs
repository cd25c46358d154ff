use crate::error::{Error, Result};
use crate::tensor::{matmul, Real, Tensor};

/// Kernels `[filters, channels, k, k]` and optional per-filter biases.
///
/// Convolutions feeding a batch norm carry no bias: the norm's shift absorbs
/// it and its train-mode gradient is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams<T> {
    pub kernels: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dGrads<T> {
    pub kernels: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Real>(input: &Tensor<T>, params: &Conv2dParams<T>, stride: usize) -> Result<Self> {
        input.expect_rank(4, "conv2d input")?;
        params.kernels.expect_rank(4, "conv2d kernels")?;
        let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
        let ks = params.kernels.shape();
        let (f, kc, k) = (ks[0], ks[1], ks[2]);
        if ks[3] != k {
            return Err(Error::config(format!("conv2d: non-square kernel {ks:?}")));
        }
        if kc != c {
            return Err(Error::config(format!(
                "conv2d: kernel expects {kc} channels, input has {c}"
            )));
        }
        if let Some(bias) = &params.bias {
            if bias.shape() != [f] {
                return Err(Error::config(format!(
                    "conv2d: bias shape {:?} does not match {f} filters",
                    bias.shape()
                )));
            }
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive"));
        }
        if k > h || k > w {
            return Err(Error::config(format!(
                "conv2d: {k}x{k} kernel does not fit {h}x{w} input"
            )));
        }
        Ok(Geometry {
            n,
            c,
            h,
            w,
            f,
            k,
            stride,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        })
    }

    fn patch_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one sample into `[c*k*k, oh*ow]`.
    fn im2col<T: Real>(&self, sample: &[T], cols: &mut [T]) {
        let p = self.positions();
        for c in 0..self.c {
            let plane = &sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let src_row = (oy * self.stride + ki) * self.w + kj;
                        let out = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            out.copy_from_slice(&plane[src_row..src_row + self.ow]);
                        } else {
                            for (ox, v) in out.iter_mut().enumerate() {
                                *v = plane[src_row + ox * self.stride];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Folds `[c*k*k, oh*ow]` back onto one sample, accumulating overlaps.
    fn col2im<T: Real>(&self, cols: &[T], sample: &mut [T]) {
        let p = self.positions();
        for c in 0..self.c {
            let plane = &mut sample[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let dst_row = (oy * self.stride + ki) * self.w + kj;
                        let src = &src[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            for (d, &v) in plane[dst_row..dst_row + self.ow].iter_mut().zip(src) {
                                *d += v;
                            }
                        } else {
                            for (ox, &v) in src.iter().enumerate() {
                                plane[dst_row + ox * self.stride] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Valid (unpadded) 2-D convolution: `[N,C,H,W] -> [N,F,H',W']`.
pub fn conv2d<T: Real>(input: &Tensor<T>, params: &Conv2dParams<T>, stride: usize) -> Result<Tensor<T>> {
    let g = Geometry::new(input, params, stride)?;
    input.validate_finite("conv2d input")?;
    let (rows, p) = (g.patch_rows(), g.positions());
    let in_stride = g.c * g.h * g.w;
    let mut out = Tensor::zeros(&[g.n, g.f, g.oh, g.ow]);
    let mut cols = vec![T::zero(); rows * p];
    for (n, dst) in out.data_mut().chunks_exact_mut(g.f * p).enumerate() {
        g.im2col(&input.data()[n * in_stride..(n + 1) * in_stride], &mut cols);
        if let Some(bias) = &params.bias {
            for (plane, &b) in dst.chunks_exact_mut(p).zip(bias.data()) {
                plane.fill(b);
            }
        }
        matmul(params.kernels.data(), false, &cols, false, dst, g.f, rows, p, true);
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to its input, kernels and biases.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    params: &Conv2dParams<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Conv2dGrads<T>)> {
    let (grad_in, grads) = backward_impl(input, params, stride, grad_out, true)?;
    Ok((grad_in.expect("input gradient requested"), grads))
}

/// Parameter gradients only; skips folding the input gradient back.
pub(crate) fn conv2d_param_grads<T: Real>(
    input: &Tensor<T>,
    params: &Conv2dParams<T>,
    stride: usize,
    grad_out: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    Ok(backward_impl(input, params, stride, grad_out, false)?.1)
}

fn backward_impl<T: Real>(
    input: &Tensor<T>,
    params: &Conv2dParams<T>,
    stride: usize,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<(Option<Tensor<T>>, Conv2dGrads<T>)> {
    let g = Geometry::new(input, params, stride)?;
    if grad_out.shape() != [g.n, g.f, g.oh, g.ow] {
        return Err(Error::validation(format!(
            "conv2d backward: upstream gradient {:?} does not match output [{}, {}, {}, {}]",
            grad_out.shape(),
            g.n,
            g.f,
            g.oh,
            g.ow
        )));
    }
    let (rows, p) = (g.patch_rows(), g.positions());
    let in_stride = g.c * g.h * g.w;
    let mut grad_in = want_input.then(|| Tensor::zeros(input.shape()));
    let mut grad_k = Tensor::zeros(params.kernels.shape());
    let mut grad_b = params.bias.as_ref().map(|_| Tensor::zeros(&[g.f]));
    let mut cols = vec![T::zero(); rows * p];
    let mut dcols = vec![T::zero(); if want_input { rows * p } else { 0 }];
    for n in 0..g.n {
        let go = &grad_out.data()[n * g.f * p..(n + 1) * g.f * p];
        if let Some(gb) = &mut grad_b {
            for (b, plane) in gb.data_mut().iter_mut().zip(go.chunks_exact(p)) {
                *b += plane.iter().copied().sum::<T>();
            }
        }
        g.im2col(&input.data()[n * in_stride..(n + 1) * in_stride], &mut cols);
        matmul(go, false, &cols, true, grad_k.data_mut(), g.f, p, rows, true);
        if let Some(gi) = &mut grad_in {
            matmul(params.kernels.data(), true, go, false, &mut dcols, rows, g.f, p, false);
            g.col2im(&dcols, &mut gi.data_mut()[n * in_stride..(n + 1) * in_stride]);
        }
    }
    Ok((
        grad_in,
        Conv2dGrads {
            kernels: grad_k,
            bias: grad_b,
        },
    ))
}
