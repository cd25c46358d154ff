use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn out_dims<T: Real>(input: &Tensor<T>, k: usize) -> Result<[usize; 6]> {
    input.expect_rank(4, "maxpool2d input")?;
    let [n, c, h, w] = [input.dim(0), input.dim(1), input.dim(2), input.dim(3)];
    if k == 0 || k > h || k > w {
        return Err(Error::config(format!(
            "maxpool2d: window {k} does not fit {h}x{w} input"
        )));
    }
    Ok([n, c, h, w, h / k, w / k])
}

/// Flat index (within the plane) of the max of the window at `(oy, ox)`.
/// Ties go to the lowest index since only strictly larger values replace.
#[inline]
fn argmax<T: Real>(plane: &[T], w: usize, k: usize, oy: usize, ox: usize) -> usize {
    let mut best = oy * k * w + ox * k;
    for dy in 0..k {
        let row = (oy * k + dy) * w + ox * k;
        for idx in row..row + k {
            if plane[idx] > plane[best] {
                best = idx;
            }
        }
    }
    best
}

/// Non-overlapping `k×k` max pooling; trailing rows/columns that do not fill
/// a window are dropped.
pub fn maxpool2d<T: Real>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    Ok(maxpool2d_indexed(input, k)?.0)
}

/// Pooled output plus the flat input index each output was taken from.
pub(crate) fn maxpool2d_indexed<T: Real>(input: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w, oh, ow] = out_dims(input, k)?;
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut index = vec![0; n * c * oh * ow];
    let planes = input.data().chunks_exact(h * w);
    let dsts = out
        .data_mut()
        .chunks_exact_mut(oh * ow)
        .zip(index.chunks_exact_mut(oh * ow));
    for (p, (plane, (dst, idx))) in planes.zip(dsts).enumerate() {
        let base = p * h * w;
        for oy in 0..oh {
            let (dst, idx) = (&mut dst[oy * ow..(oy + 1) * ow], &mut idx[oy * ow..(oy + 1) * ow]);
            // Row-major scan of every window at once; strict comparison keeps the first max.
            for dy in 0..k {
                let start = (oy * k + dy) * w;
                let row = &plane[start..start + ow * k];
                for (ox, window) in row.chunks_exact(k).enumerate() {
                    for (dx, &v) in window.iter().enumerate() {
                        if (dy == 0 && dx == 0) || v > dst[ox] {
                            dst[ox] = v;
                            idx[ox] = base + start + ox * k + dx;
                        }
                    }
                }
            }
        }
    }
    Ok((out, index))
}

/// Scatters `grad_out` onto an input of `input_shape` through saved argmax indices.
pub(crate) fn maxpool2d_backward_indexed<T: Real>(
    input_shape: &[usize],
    index: &[usize],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    debug_assert_eq!(index.len(), grad_out.len());
    let mut grad_in = Tensor::zeros(input_shape);
    let dst = grad_in.data_mut();
    for (&i, &g) in index.iter().zip(grad_out.data()) {
        dst[i] += g;
    }
    grad_in
}

/// Routes each upstream gradient to its window's argmax.
pub fn maxpool2d_backward<T: Real>(input: &Tensor<T>, k: usize, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w, oh, ow] = out_dims(input, k)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return Err(Error::validation(format!(
            "maxpool2d backward: upstream gradient {:?} does not match [{n}, {c}, {oh}, {ow}]",
            grad_out.shape()
        )));
    }
    let mut grad_in = Tensor::zeros(input.shape());
    let planes = input.data().chunks_exact(h * w);
    let grads = grad_out.data().chunks_exact(oh * ow);
    let dsts = grad_in.data_mut().chunks_exact_mut(h * w);
    for ((plane, g), dst) in planes.zip(grads).zip(dsts) {
        for oy in 0..oh {
            for ox in 0..ow {
                dst[argmax(plane, w, k, oy, ox)] += g[oy * ow + ox];
            }
        }
    }
    Ok(grad_in)
}
