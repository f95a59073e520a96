use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_t, Reduce, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dweight: Tensor<T>,
    pub dbias: Tensor<T>,
}

/// `y = x . W + b` with `x: [B, n]`, `W: [n, m]`, `b: [m]`.
pub fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    matmul(x, weight)?.add_row(bias)
}

pub fn linear_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    if dy.rank() != 2 || x.rank() != 2 || dy.shape()[0] != x.shape()[0] {
        return Err(Error::shape(format!(
            "linear backward: upstream {:?} vs input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    Ok(LinearGrads {
        dx: matmul_t(dy, false, weight, true)?,
        dweight: matmul_t(x, true, dy, false)?,
        dbias: dy.reduce(Reduce::Sum, 0)?,
    })
}
