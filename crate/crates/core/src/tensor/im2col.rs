use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Square-kernel sliding-window geometry over a `[C, H, W]` plane stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// Rejects windows that do not tile the padded input exactly.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::geometry(format!(
                "empty input {channels}x{height}x{width}"
            )));
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::geometry(format!(
                "kernel ({kernel}) and stride ({stride}) must be >= 1"
            )));
        }
        for (name, extent) in [("height", height), ("width", width)] {
            let padded = extent + 2 * padding;
            if padded < kernel {
                return Err(Error::geometry(format!(
                    "kernel {kernel} larger than padded {name} {padded}"
                )));
            }
            if !(padded - kernel).is_multiple_of(stride) {
                return Err(Error::geometry(format!(
                    "{name} {extent} with padding {padding}, kernel {kernel}: \
                     ({padded} - {kernel}) is not divisible by stride {stride}"
                )));
            }
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
        })
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Rows of the column matrix: `C * k * k`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.plane_len()
    }

    /// Output coordinates `lo..hi` along an axis of `extent` whose patch
    /// offset `kj` lands inside the input rather than the padding.
    #[inline]
    fn valid_range(&self, kj: usize, out_extent: usize, extent: usize) -> (usize, usize) {
        // need 0 <= o*s + kj - pad < extent
        let lo = self.padding.saturating_sub(kj).div_ceil(self.stride);
        let limit = extent + self.padding - kj; // o*s < limit
        let hi = limit.div_ceil(self.stride).min(out_extent);
        (lo.min(hi), hi)
    }

    /// Input coordinate read by patch offset `ki` at output coordinate `o`,
    /// or `None` inside the zero padding.
    #[inline]
    fn source(&self, o: usize, ki: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + ki) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds a batch of images `[B, C, H, W]` (flat) into `cols`, a row-major
/// `[C*k*k, B*Hout*Wout]` matrix. Row `(c*k + ki)*k + kj` holds input channel
/// `c` at patch offset `(ki, kj)`; column `b*Hout*Wout + oh*Wout + ow` is the
/// receptive field of output position `(oh, ow)` of image `b`.
pub fn im2col_batch<T: Scalar>(x: &[T], batch: usize, g: &ConvGeometry, cols: &mut [T]) {
    let positions = g.out_positions();
    let row_len = batch * positions;
    assert_eq!(x.len(), batch * g.image_len(), "im2col input length");
    assert_eq!(cols.len(), g.patch_len() * row_len, "im2col output length");
    let (ow_n, k) = (g.out_width(), g.kernel);
    cols.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(row, out)| {
            let c = row / (k * k);
            let ki = (row / k) % k;
            let kj = row % k;
            let (lo, hi) = g.valid_range(kj, ow_n, g.width);
            for b in 0..batch {
                let plane = &x[(b * g.channels + c) * g.plane_len()..][..g.plane_len()];
                let dst = &mut out[b * positions..][..positions];
                for (oh, dst_row) in dst.chunks_exact_mut(ow_n).enumerate() {
                    let Some(h) = g.source(oh, ki, g.height) else {
                        dst_row.fill(T::zero());
                        continue;
                    };
                    let src = &plane[h * g.width..][..g.width];
                    dst_row[..lo].fill(T::zero());
                    dst_row[hi..].fill(T::zero());
                    let first = lo * g.stride + kj - g.padding;
                    if g.stride == 1 {
                        dst_row[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                    } else {
                        for (d, &v) in dst_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        });
}

/// Adjoint of [`im2col_batch`]: scatters columns back onto `[B, C, H, W]`,
/// summing overlapping contributions and dropping those that land in the
/// padding. `x` is overwritten.
pub fn col2im_batch<T: Scalar>(cols: &[T], batch: usize, g: &ConvGeometry, x: &mut [T]) {
    let positions = g.out_positions();
    let row_len = batch * positions;
    assert_eq!(x.len(), batch * g.image_len(), "col2im output length");
    assert_eq!(cols.len(), g.patch_len() * row_len, "col2im input length");
    let (ow_n, k) = (g.out_width(), g.kernel);
    x.par_chunks_mut(g.plane_len())
        .enumerate()
        .for_each(|(bc, plane)| {
            let (b, c) = (bc / g.channels, bc % g.channels);
            plane.fill(T::zero());
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * row_len + b * positions..][..positions];
                    let (lo, hi) = g.valid_range(kj, ow_n, g.width);
                    let first = (lo * g.stride + kj).wrapping_sub(g.padding);
                    for (oh, src_row) in src.chunks_exact(ow_n).enumerate() {
                        let Some(h) = g.source(oh, ki, g.height) else {
                            continue;
                        };
                        let dst = &mut plane[h * g.width..][..g.width];
                        if lo >= hi {
                            continue;
                        }
                        for (d, &v) in dst[first..]
                            .iter_mut()
                            .step_by(g.stride)
                            .zip(&src_row[lo..hi])
                        {
                            *d = *d + v;
                        }
                    }
                }
            }
        });
}

/// Single-image unfold: `[C, H, W] -> [C*k*k, Hout*Wout]`.
pub fn im2col<T: Scalar>(
    input: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let &[c, h, w] = input.shape() else {
        return Err(Error::shape(format!(
            "im2col expects [C, H, W], got {:?}",
            input.shape()
        )));
    };
    let g = ConvGeometry::new(c, h, w, kernel, stride, padding)?;
    let mut cols = vec![T::zero(); g.patch_len() * g.out_positions()];
    im2col_batch(input.data(), 1, &g, &mut cols);
    Tensor::from_vec(&[g.patch_len(), g.out_positions()], cols)
}

/// Single-image fold, the adjoint of [`im2col`].
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(channels, height, width, kernel, stride, padding)?;
    if cols.shape() != [g.patch_len(), g.out_positions()] {
        return Err(Error::shape(format!(
            "col2im expects columns of shape [{}, {}], got {:?}",
            g.patch_len(),
            g.out_positions(),
            cols.shape()
        )));
    }
    let mut x = vec![T::zero(); g.image_len()];
    col2im_batch(cols.data(), 1, &g, &mut x);
    Tensor::from_vec(&[channels, height, width], x)
}
