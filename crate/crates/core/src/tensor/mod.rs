//! Dense row-major tensors and the numeric kernels the network layers use.
//!
//! A [`Tensor`] owns a contiguous buffer whose flat index follows the
//! row-major law `flat(i0, .., ik) = ((i0 * d1 + i1) * d2 + ..) + ik`.
//! Binary elementwise operations require identical shapes; the only
//! broadcast is [`Tensor::add_row`], which adds a length-`n` vector to every
//! row of a `[m, n]` matrix.
//!
//! Every kernel here is deterministic: reductions accumulate in increasing
//! flat-index order and [`matmul`] uses a fixed blocking whose per-element
//! accumulation order depends only on the operand extents.

mod im2col;
mod rng;
mod scalar;

pub use im2col::{col2im, col2im_batch, im2col, im2col_batch, ConvGeometry};
pub use rng::Rng;
pub use scalar::Scalar;

use crate::error::{Error, Result};

/// Initial contents for [`Tensor::create`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Zero,
    Constant(f64),
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_extents(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape("tensor needs at least one dimension"));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!(
            "extent {pos} of {shape:?} is zero; extents must be >= 1"
        )));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    /// Wraps `data` as a tensor of `shape`.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_extents(shape)?;
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Random fills draw from `rng` in flat-index order.
    pub fn create(shape: &[usize], fill: Fill, rng: &mut Rng) -> Result<Self> {
        let n = check_extents(shape)?;
        let data = match fill {
            Fill::Zero => vec![T::zero(); n],
            Fill::Constant(c) => vec![T::from_f64_lossy(c); n],
            Fill::Uniform { low, high } => (0..n)
                .map(|_| T::from_f64_lossy(rng.uniform_range(low, high)))
                .collect(),
            Fill::Normal { mean, std } => (0..n)
                .map(|_| T::from_f64_lossy(rng.normal(mean, std)))
                .collect(),
        };
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let n = check_extents(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_extents(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index of rank {} into tensor of rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut flat = 0;
        for (axis, (&i, &d)) in index.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(Error::shape(format!(
                    "index {i} out of range for axis {axis} of extent {d}"
                )));
            }
            flat = flat * d + i;
        }
        Ok(flat)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: T) -> Result<()> {
        let at = self.offset(index)?;
        self.data[at] = value;
        Ok(())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // Elementwise maps.

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise operands have shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    pub fn exp(&self) -> Self {
        self.map(T::exp)
    }

    pub fn ln(&self) -> Self {
        self.map(T::ln)
    }

    /// `max(x, floor)` elementwise; `floor = 0` is ReLU.
    pub fn max_scalar(&self, floor: T) -> Self {
        self.map(|v| if v > floor { v } else { floor })
    }

    /// 1 where `x > threshold`, else 0.
    pub fn gt_mask(&self, threshold: T) -> Self {
        self.map(|v| if v > threshold { T::one() } else { T::zero() })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Adds a row vector `[n]` to every row of a `[m, n]` matrix.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        if self.rank() != 2 || row.rank() != 1 || row.shape[0] != self.shape[1] {
            return Err(Error::shape(format!(
                "row broadcast of {:?} onto {:?}",
                row.shape, self.shape
            )));
        }
        let n = self.shape[1];
        let mut out = self.clone();
        for chunk in out.data.chunks_exact_mut(n) {
            for (o, &b) in chunk.iter_mut().zip(&row.data) {
                *o = *o + b;
            }
        }
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    /// Flat inner product.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::shape(format!(
                "transpose needs rank 2, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self {
            shape: vec![n, m],
            data,
        })
    }

    pub fn reduce(&self, op: Reduce, axis: usize) -> Result<Self> {
        reduce(self, op, axis)
    }
}

/// Reduction kinds for [`reduce`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
    /// Index of the maximum; ties resolve to the lowest index.
    Argmax,
}

/// Reduces `t` along `axis`, removing that axis (a rank-1 input yields `[1]`).
pub fn reduce<T: Scalar>(t: &Tensor<T>, op: Reduce, axis: usize) -> Result<Tensor<T>> {
    if axis >= t.rank() {
        return Err(Error::shape(format!(
            "axis {axis} out of range for rank {}",
            t.rank()
        )));
    }
    let extent = t.shape[axis];
    let outer: usize = t.shape[..axis].iter().product();
    let inner: usize = t.shape[axis + 1..].iter().product();
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| t.data[(o * extent + j) * inner + i];
            let v = match op {
                Reduce::Sum | Reduce::Mean => {
                    let s = (0..extent).fold(T::zero(), |acc, j| acc + at(j));
                    if op == Reduce::Mean {
                        s / T::from_usize(extent).unwrap()
                    } else {
                        s
                    }
                }
                Reduce::Max => (1..extent).fold(at(0), |m, j| if at(j) > m { at(j) } else { m }),
                Reduce::Argmax => T::from_usize(argmax_by(extent, at)).unwrap(),
            };
            out.push(v);
        }
    }
    let mut shape: Vec<usize> = t.shape[..axis].to_vec();
    shape.extend_from_slice(&t.shape[axis + 1..]);
    if shape.is_empty() {
        shape.push(1);
    }
    Tensor::from_vec(&shape, out)
}

fn argmax_by<T: Scalar>(extent: usize, at: impl Fn(usize) -> T) -> usize {
    let mut best = 0;
    for j in 1..extent {
        // strict comparison keeps the lowest index on ties; NaN never wins
        if at(j) > at(best) {
            best = j;
        }
    }
    best
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    argmax_by(values.len(), |j| values[j])
}

/// `[m, k] . [k, n] -> [m, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul_t(a, false, b, false)
}

/// Matrix product with optional transposition of either operand, without
/// materializing the transpose.
pub fn matmul_t<T: Scalar>(
    a: &Tensor<T>,
    transpose_a: bool,
    b: &Tensor<T>,
    transpose_b: bool,
) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, ka) = if transpose_a {
        (a.shape[1], a.shape[0])
    } else {
        (a.shape[0], a.shape[1])
    };
    let (kb, n) = if transpose_b {
        (b.shape[1], b.shape[0])
    } else {
        (b.shape[0], b.shape[1])
    };
    if ka != kb {
        return Err(Error::shape(format!(
            "matmul inner extents disagree: {:?}{} . {:?}{}",
            a.shape,
            if transpose_a { "^T" } else { "" },
            b.shape,
            if transpose_b { "^T" } else { "" }
        )));
    }
    let mut out = vec![T::zero(); m * n];
    gemm(
        m,
        ka,
        n,
        T::one(),
        MatRef::new(&a.data, a.shape[1], transpose_a),
        MatRef::new(&b.data, b.shape[1], transpose_b),
        T::zero(),
        &mut out,
    );
    Tensor::from_vec(&[m, n], out)
}

/// Borrowed row-major matrix, optionally viewed transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    data: &'a [T],
    row_stride: isize,
    col_stride: isize,
}

impl<'a, T> MatRef<'a, T> {
    /// `cols` is the stored (untransposed) row length.
    pub(crate) fn new(data: &'a [T], cols: usize, transposed: bool) -> Self {
        if transposed {
            Self {
                data,
                row_stride: 1,
                col_stride: cols as isize,
            }
        } else {
            Self {
                data,
                row_stride: cols as isize,
                col_stride: 1,
            }
        }
    }
}

/// `c <- alpha * a . b + beta * c` with `c` a dense row-major `[m, n]` buffer.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
) {
    assert!(a.data.len() >= m * k && b.data.len() >= k * n && c.len() >= m * n);
    // SAFETY: extents checked above; `c` is exclusively borrowed.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    // Reference product with a fixed left-to-right accumulation.
    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
                }
            }
        }
        Tensor::from_vec(&[m, n], c).unwrap()
    }

    #[test]
    fn create_fills() {
        let mut rng = Rng::seed(1);
        let z = Tensor::<f32>::create(&[2, 2], Fill::Zero, &mut rng).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::<f32>::create(&[3], Fill::Constant(1.0), &mut rng).unwrap();
        assert_eq!(c.data(), &[1.0, 1.0, 1.0]);
        let u = Fill::Uniform { low: 0.0, high: 1.0 };
        let a = Tensor::<f32>::create(&[4], u, &mut Rng::seed(42)).unwrap();
        let b = Tensor::<f32>::create(&[4], u, &mut Rng::seed(42)).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn zero_extent_is_rejected() {
        let mut rng = Rng::seed(0);
        assert!(matches!(
            Tensor::<f32>::create(&[2, 0], Fill::Zero, &mut rng),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn flat_index_law_exhaustive() {
        let shape = [2, 3, 4, 5];
        let n: usize = shape.iter().product();
        let x = Tensor::<f64>::from_vec(&shape, (0..n).map(|v| v as f64).collect()).unwrap();
        let mut expected = 0usize;
        for i0 in 0..2 {
            for i1 in 0..3 {
                for i2 in 0..4 {
                    for i3 in 0..5 {
                        let flat = ((i0 * 3 + i1) * 4 + i2) * 5 + i3;
                        assert_eq!(flat, expected);
                        assert_eq!(x.offset(&[i0, i1, i2, i3]).unwrap(), flat);
                        assert_eq!(x.get(&[i0, i1, i2, i3]).unwrap(), flat as f64);
                        expected += 1;
                    }
                }
            }
        }
        assert!(x.offset(&[2, 0, 0, 0]).is_err());
    }

    #[test]
    fn matmul_hand_case() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let mut rng = Rng::seed(5);
        let a = Tensor::<f64>::create(&[4, 4], Fill::Normal { mean: 0.0, std: 1.0 }, &mut rng)
            .unwrap();
        let mut eye = Tensor::<f64>::zeros(&[4, 4]).unwrap();
        for i in 0..4 {
            eye.set(&[i, i], 1.0).unwrap();
        }
        assert_eq!(matmul(&a, &eye).unwrap(), a);
        let z = Tensor::<f64>::zeros(&[4, 3]).unwrap();
        assert_eq!(matmul(&a, &z).unwrap().data(), &[0.0; 12]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_transposes_match_explicit() {
        let mut rng = Rng::seed(9);
        let n = Fill::Normal { mean: 0.0, std: 1.0 };
        let a = Tensor::<f64>::create(&[5, 3], n, &mut rng).unwrap();
        let b = Tensor::<f64>::create(&[5, 4], n, &mut rng).unwrap();
        let direct = matmul_t(&a, true, &b, false).unwrap();
        let oracle = naive_matmul(&a.transpose().unwrap(), &b);
        for (x, y) in direct.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = Tensor::<f64>::create(&[4, 3], n, &mut rng).unwrap();
        let direct = matmul_t(&a, false, &c, true).unwrap();
        let oracle = naive_matmul(&a, &c.transpose().unwrap());
        for (x, y) in direct.data().iter().zip(oracle.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_is_bit_reproducible() {
        let mut rng = Rng::seed(11);
        let n = Fill::Normal { mean: 0.0, std: 1.0 };
        let a = Tensor::<f32>::create(&[67, 129], n, &mut rng).unwrap();
        let b = Tensor::<f32>::create(&[129, 45], n, &mut rng).unwrap();
        let c1 = matmul(&a, &b).unwrap();
        let c2 = matmul(&a, &b).unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn reductions() {
        let v = t(&[3], &[0.1, 0.5, 0.5]);
        assert_eq!(v.reduce(Reduce::Argmax, 0).unwrap().data(), &[1.0]);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        let v = t(&[3], &[2.0, 4.0, 6.0]);
        assert_eq!(v.reduce(Reduce::Mean, 0).unwrap().data(), &[4.0]);
        let z = Tensor::<f64>::zeros(&[4]).unwrap();
        assert_eq!(z.reduce(Reduce::Sum, 0).unwrap().data(), &[0.0]);

        let m = t(&[2, 3], &[1.0, 5.0, 2.0, 7.0, 0.0, 7.0]);
        assert_eq!(m.reduce(Reduce::Sum, 0).unwrap().data(), &[8.0, 5.0, 9.0]);
        assert_eq!(m.reduce(Reduce::Max, 1).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(m.reduce(Reduce::Argmax, 1).unwrap().data(), &[1.0, 0.0]);
        assert!(m.reduce(Reduce::Sum, 2).is_err());
    }

    #[test]
    fn elementwise() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.max_scalar(0.0).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t(&[1], &[0.0]).exp().data(), &[1.0]);
        let z = x.zeros_like();
        assert_eq!(x.add(&z).unwrap(), x);
        assert_eq!(x.gt_mask(0.0).data(), &[0.0, 0.0, 1.0]);
        assert!(x.add(&t(&[1], &[1.0])).is_err());
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let r = m.add_row(&t(&[2], &[10.0, 20.0])).unwrap();
        assert_eq!(r.data(), &[11.0, 22.0, 13.0, 24.0]);
        assert!(m.add_row(&t(&[3], &[0.0; 3])).is_err());
    }
}
