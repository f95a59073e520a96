//! Per-channel batch normalization over `[B, C, H, W]` activations.
//!
//! Train mode normalizes each channel by its batch mean and biased variance
//! and folds the batch statistics into the running estimates
//! (`running = (1 - momentum) * running + momentum * batch`, with the
//! unbiased variance). Eval mode normalizes with the running estimates.

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running mean and variance per channel; starts at mean 0, variance 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::full(&[channels], T::one())?,
        })
    }
}

/// Values saved by the forward pass for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

fn dims<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let &[b, c, h, w] = x.shape() else {
        return Err(Error::shape(format!(
            "batch norm input must be [B, C, H, W], got {:?}",
            x.shape()
        )));
    };
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "batch norm over {c} channels got gamma {:?} and beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok((b, c, h * w))
}

/// Visits `(channel, values of that channel in one image)` in `(b, c)` order.
fn planes<T>(data: &[T], channels: usize, plane: usize) -> impl Iterator<Item = (usize, &[T])> {
    data.chunks_exact(plane)
        .enumerate()
        .map(move |(bc, p)| (bc % channels, p))
}

/// Sum of `f` over `p` with eight interleaved accumulators, which keeps the
/// reduction order fixed while letting the compiler vectorize it.
#[inline]
fn lane_sum<T: Scalar>(p: &[T], f: impl Fn(T) -> T) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = p.chunks_exact(8);
    let tail = chunks.remainder();
    for ch in chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a = *a + f(v);
        }
    }
    let mut total = tail.iter().fold(T::zero(), |s, &v| s + f(v));
    for a in acc {
        total = total + a;
    }
    total
}

/// `(sum(a), sum(a * b))` with the same lane structure as [`lane_sum`].
#[inline]
fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> (T, T) {
    let (mut s, mut d) = ([T::zero(); 8], [T::zero(); 8]);
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            s[i] = s[i] + x[i];
            d[i] = d[i] + x[i] * y[i];
        }
    }
    let (mut sum, mut dot) = (T::zero(), T::zero());
    for (&x, &y) in ta.iter().zip(tb) {
        sum = sum + x;
        dot = dot + x * y;
    }
    for i in 0..8 {
        sum = sum + s[i];
        dot = dot + d[i];
    }
    (sum, dot)
}

pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (batch, channels, plane) = dims(x, gamma, beta)?;
    let count = batch * plane;
    let eps = T::from_f64_lossy(BN_EPSILON);

    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::DegenerateVariance(count));
            }
            let n = T::from_usize(count).unwrap();
            let mut sum = vec![T::zero(); channels];
            for (c, p) in planes(x.data(), channels, plane) {
                sum[c] = sum[c] + lane_sum(p, |v| v);
            }
            let mean: Vec<T> = sum.iter().map(|&s| s / n).collect();
            let mut sq = vec![T::zero(); channels];
            for (c, p) in planes(x.data(), channels, plane) {
                let mu = mean[c];
                sq[c] = sq[c] + lane_sum(p, |v| (v - mu) * (v - mu));
            }
            let var: Vec<T> = sq.iter().map(|&s| s / n).collect();

            let m = T::from_f64_lossy(BN_MOMENTUM);
            let unbias = n / (n - T::one());
            for c in 0..channels {
                let rm = &mut running.mean.data_mut()[c];
                *rm = (T::one() - m) * *rm + m * mean[c];
                let rv = &mut running.var.data_mut()[c];
                *rv = (T::one() - m) * *rv + m * var[c] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (running.mean.data().to_vec(), running.var.data().to_vec()),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = x.zeros_like();
    let mut y = x.zeros_like();
    for (bc, (src, (xh, out))) in x
        .data()
        .chunks_exact(plane)
        .zip(
            x_hat
                .data_mut()
                .chunks_exact_mut(plane)
                .zip(y.data_mut().chunks_exact_mut(plane)),
        )
        .enumerate()
    {
        let c = bc % channels;
        let (g, b, mu, is) = (gamma.data()[c], beta.data()[c], mean[c], inv_std[c]);
        for ((&v, h), o) in src.iter().zip(xh.iter_mut()).zip(out.iter_mut()) {
            *h = (v - mu) * is;
            *o = g * *h + b;
        }
    }
    Ok((y, BnCache { x_hat, inv_std, mode }))
}

/// Exact gradient of [`batchnorm_forward`]. In train mode this includes the
/// dependence of the batch mean and variance on `x`.
pub fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BnCache<T>,
) -> Result<BnGrads<T>> {
    if dy.shape() != cache.x_hat.shape() {
        return Err(Error::shape(format!(
            "batch norm upstream gradient is {:?}, forward produced {:?}",
            dy.shape(),
            cache.x_hat.shape()
        )));
    }
    let (batch, channels, plane) = dims(dy, gamma, gamma)?;
    let mut dgamma = vec![T::zero(); channels];
    let mut dbeta = vec![T::zero(); channels];
    for ((c, g), (_, h)) in planes(dy.data(), channels, plane).zip(planes(
        cache.x_hat.data(),
        channels,
        plane,
    )) {
        let (sum, dot) = lane_dot(g, h);
        dbeta[c] = dbeta[c] + sum;
        dgamma[c] = dgamma[c] + dot;
    }

    let n = T::from_usize(batch * plane).unwrap();
    let mut dx = dy.zeros_like();
    for (bc, ((g, h), out)) in dy
        .data()
        .chunks_exact(plane)
        .zip(cache.x_hat.data().chunks_exact(plane))
        .zip(dx.data_mut().chunks_exact_mut(plane))
        .enumerate()
    {
        let c = bc % channels;
        let scale = gamma.data()[c] * cache.inv_std[c];
        match cache.mode {
            Mode::Train => {
                // dx = gamma * inv_std / N * (N*dy - sum(dy) - x_hat * sum(dy * x_hat))
                let k = scale / n;
                let (sum_dy, sum_dy_xh) = (dbeta[c], dgamma[c]);
                for ((&d, &xh), o) in g.iter().zip(h).zip(out.iter_mut()) {
                    *o = k * (n * d - sum_dy - xh * sum_dy_xh);
                }
            }
            Mode::Eval => {
                for (&d, o) in g.iter().zip(out.iter_mut()) {
                    *o = scale * d;
                }
            }
        }
    }
    Ok(BnGrads {
        dx,
        dgamma: Tensor::from_vec(&[channels], dgamma)?,
        dbeta: Tensor::from_vec(&[channels], dbeta)?,
    })
}
