//! Max pooling over square windows.
//!
//! Forward records, for every output element, the flat input index of the
//! first maximal value in row-major window order. Backward routes each
//! upstream gradient to that index only, summing where windows overlap.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    /// Flat index into the input for each output element.
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Non-overlapping 2x2 windows, the common case.
fn pool2x2<T: Scalar>(plane: &[T], w: usize, base: usize, out: &mut [T], idx: &mut [usize]) {
    let ow = w / 2;
    for (i, (out_row, idx_row)) in out.chunks_exact_mut(ow).zip(idx.chunks_exact_mut(ow)).enumerate() {
        let top = &plane[2 * i * w..][..w];
        let bottom = &plane[(2 * i + 1) * w..][..w];
        for (j, (o, ix)) in out_row.iter_mut().zip(idx_row.iter_mut()).enumerate() {
            let c = 2 * j;
            let (mut best, mut at) = (top[c], 2 * i * w + c);
            for (v, pos) in [
                (top[c + 1], 2 * i * w + c + 1),
                (bottom[c], (2 * i + 1) * w + c),
                (bottom[c + 1], (2 * i + 1) * w + c + 1),
            ] {
                if v > best {
                    best = v;
                    at = pos;
                }
            }
            *o = best;
            *ix = base + at;
        }
    }
}

pub fn maxpool_forward<T: Scalar>(
    x: &Tensor<T>,
    size: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    let &[batch, channels, h, w] = x.shape() else {
        return Err(Error::shape(format!(
            "max pool input must be [B, C, H, W], got {:?}",
            x.shape()
        )));
    };
    let g = ConvGeometry::new(channels, h, w, size, stride, 0)?;
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane_out = oh * ow;
    let mut y = vec![T::zero(); batch * channels * plane_out];
    let mut argmax = vec![0usize; y.len()];
    y.par_chunks_mut(plane_out)
        .zip(argmax.par_chunks_mut(plane_out))
        .enumerate()
        .for_each(|(bc, (out, idx))| {
            let base = bc * h * w;
            let plane = &x.data()[base..][..h * w];
            if size == 2 && stride == 2 {
                pool2x2(plane, w, base, out, idx);
                return;
            }
            for i in 0..oh {
                let out_row = &mut out[i * ow..][..ow];
                let idx_row = &mut idx[i * ow..][..ow];
                for j in 0..ow {
                    let mut best = (i * stride) * w + j * stride;
                    let mut best_v = plane[best];
                    for p in 0..size {
                        let start = (i * stride + p) * w + j * stride;
                        for (q, &v) in plane[start..start + size].iter().enumerate() {
                            if v > best_v {
                                best_v = v;
                                best = start + q;
                            }
                        }
                    }
                    out_row[j] = best_v;
                    idx_row[j] = base + best;
                }
            }
        });
    Ok((
        Tensor::from_vec(&[batch, channels, oh, ow], y)?,
        PoolIndices {
            input_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(dy: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if dy.len() != indices.argmax.len() {
        return Err(Error::shape(format!(
            "max pool upstream gradient has {} elements, forward produced {}",
            dy.len(),
            indices.argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(&indices.input_shape)?;
    let d = dx.data_mut();
    for (&g, &at) in dy.data().iter().zip(&indices.argmax) {
        d[at] = d[at] + g;
    }
    Ok(dx)
}
