//! 2-D convolution lowered to im2col + GEMM.
//!
//! The operation is cross-correlation (the kernel is not flipped):
//! `y[b,o,i,j] = bias[o] + sum_{c,p,q} w[o,c,p,q] * x[b,c,i*s+p-pad,j*s+q-pad]`
//! with out-of-range input positions reading as zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{col2im_batch, gemm, im2col_batch, ConvGeometry, MatRef, Scalar, Tensor};

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dweight: Tensor<T>,
    pub dbias: Tensor<T>,
}

fn geometry<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeometry)> {
    let &[batch, cin, h, w] = x.shape() else {
        return Err(Error::shape(format!(
            "conv input must be [B, C, H, W], got {:?}",
            x.shape()
        )));
    };
    let &[cout, wcin, kh, kw] = weight.shape() else {
        return Err(Error::shape(format!(
            "conv weight must be [Cout, Cin, k, k], got {:?}",
            weight.shape()
        )));
    };
    if kh != kw {
        return Err(Error::shape(format!("non-square kernel {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels, weight expects {wcin}"
        )));
    }
    let g = ConvGeometry::new(cin, h, w, kh, stride, padding)?;
    Ok((batch, cout, g))
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (batch, cout, g) = geometry(x, weight, stride, padding)?;
    if bias.shape() != [cout] {
        return Err(Error::shape(format!(
            "conv bias must be [{cout}], got {:?}",
            bias.shape()
        )));
    }
    let (positions, patch) = (g.out_positions(), g.patch_len());
    let mut y = vec![T::zero(); batch * cout * positions];
    y.par_chunks_mut(cout * positions)
        .zip(x.data().par_chunks(g.image_len()))
        .for_each_init(
            || vec![T::zero(); patch * positions],
            |cols, (yb, xb)| {
                im2col_batch(xb, 1, &g, cols);
                for (row, &b) in yb.chunks_exact_mut(positions).zip(bias.data()) {
                    row.fill(b);
                }
                // [Cout, patch] . [patch, P] accumulated onto the bias
                gemm(
                    cout,
                    patch,
                    positions,
                    T::one(),
                    MatRef::new(weight.data(), patch, false),
                    MatRef::new(cols, positions, false),
                    T::one(),
                    yb,
                );
            },
        );
    Tensor::from_vec(&[batch, cout, g.out_height(), g.out_width()], y)
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient `dy`.
pub fn conv2d_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvGrads<T>> {
    let (batch, cout, g) = geometry(x, weight, stride, padding)?;
    let (positions, patch) = (g.out_positions(), g.patch_len());
    let expected = [batch, cout, g.out_height(), g.out_width()];
    if dy.shape() != expected {
        return Err(Error::shape(format!(
            "conv upstream gradient is {:?}, forward produced {expected:?}",
            dy.shape()
        )));
    }
    let mut dx = vec![T::zero(); x.len()];
    // per-image weight gradients, summed below in image order
    let mut partial = vec![T::zero(); batch * cout * patch];
    dx.par_chunks_mut(g.image_len())
        .zip(partial.par_chunks_mut(cout * patch))
        .zip(x.data().par_chunks(g.image_len()))
        .zip(dy.data().par_chunks(cout * positions))
        .for_each_init(
            || (vec![T::zero(); patch * positions], vec![T::zero(); patch * positions]),
            |(cols, dcols), (((dxb, dwb), xb), dyb)| {
                im2col_batch(xb, 1, &g, cols);
                // dW_b = dY_b . cols^T : [Cout, P] . [P, patch]
                gemm(
                    cout,
                    positions,
                    patch,
                    T::one(),
                    MatRef::new(dyb, positions, false),
                    MatRef::new(cols, positions, true),
                    T::zero(),
                    dwb,
                );
                // dcols = W^T . dY_b : [patch, Cout] . [Cout, P]
                gemm(
                    patch,
                    cout,
                    positions,
                    T::one(),
                    MatRef::new(weight.data(), patch, true),
                    MatRef::new(dyb, positions, false),
                    T::zero(),
                    dcols,
                );
                col2im_batch(dcols, 1, &g, dxb);
            },
        );
    let mut dweight = vec![T::zero(); cout * patch];
    for dwb in partial.chunks_exact(cout * patch) {
        for (d, &v) in dweight.iter_mut().zip(dwb) {
            *d = *d + v;
        }
    }
    let mut dbias = vec![T::zero(); cout];
    for (bo, row) in dy.data().chunks_exact(positions).enumerate() {
        let o = bo % cout;
        dbias[o] = row.iter().fold(dbias[o], |acc, &v| acc + v);
    }

    Ok(ConvGrads {
        dx: Tensor::from_vec(x.shape(), dx)?,
        dweight: Tensor::from_vec(weight.shape(), dweight)?,
        dbias: Tensor::from_vec(&[cout], dbias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Fill, Rng};

    #[test]
    fn ones_kernel_counts_overlap() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0).unwrap();
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0).unwrap();
        let b = Tensor::<f64>::zeros(&[1]).unwrap();
        let y = conv2d_forward(&x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = Rng::seed(4);
        let x = Tensor::<f32>::create(&[2, 1, 5, 5], Fill::Normal { mean: 0.0, std: 1.0 }, &mut rng)
            .unwrap();
        let w = Tensor::<f32>::full(&[1, 1, 1, 1], 1.0).unwrap();
        let b = Tensor::<f32>::zeros(&[1]).unwrap();
        assert_eq!(conv2d_forward(&x, &w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = Rng::seed(8);
        let n = Fill::Normal { mean: 0.0, std: 1.0 };
        let x = Tensor::<f64>::create(&[2, 3, 4, 4], n, &mut rng).unwrap();
        let w = Tensor::<f64>::create(&[5, 3, 3, 3], n, &mut rng).unwrap();
        let dy = Tensor::<f64>::zeros(&[2, 5, 4, 4]).unwrap();
        let g = conv2d_backward(&dy, &x, &w, 1, 1).unwrap();
        assert!(g.dx.data().iter().all(|&v| v == 0.0));
        assert!(g.dweight.data().iter().all(|&v| v == 0.0));
        assert!(g.dbias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_grad_is_upstream_sum() {
        let mut rng = Rng::seed(12);
        let n = Fill::Normal { mean: 0.0, std: 1.0 };
        let x = Tensor::<f64>::create(&[3, 2, 4, 4], n, &mut rng).unwrap();
        let w = Tensor::<f64>::create(&[2, 2, 3, 3], n, &mut rng).unwrap();
        let dy = Tensor::<f64>::create(&[3, 2, 4, 4], n, &mut rng).unwrap();
        let g = conv2d_backward(&dy, &x, &w, 1, 1).unwrap();
        for c in 0..2 {
            let mut s = 0.0;
            for b in 0..3 {
                for p in 0..16 {
                    s += dy.data()[(b * 2 + c) * 16 + p];
                }
            }
            assert!((g.dbias.data()[c] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]).unwrap();
        let w = Tensor::<f32>::zeros(&[3, 1, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[3]).unwrap();
        assert!(matches!(
            conv2d_forward(&x, &w, &b, 1, 1),
            Err(Error::Shape(_))
        ));
        let w = Tensor::<f32>::zeros(&[3, 2, 3, 3]).unwrap();
        assert!(matches!(
            conv2d_forward(&x, &w, &b, 2, 0),
            Err(Error::Geometry(_))
        ));
    }
}
