use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.max_scalar(T::zero())
}

/// Passes `dy` where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(dy: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.shape() != x.shape() {
        return Err(Error::shape(format!(
            "relu upstream gradient {:?} vs input {:?}",
            dy.shape(),
            x.shape()
        )));
    }
    dy.zip_map(x, |d, v| if v > T::zero() { d } else { T::zero() })
}
