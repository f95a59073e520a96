use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

/// Per-element multipliers from a train-mode forward: 0 for dropped
/// elements, `1 / (1 - rate)` for survivors. `None` when the forward was the
/// identity.
#[derive(Debug, Clone)]
pub struct DropoutMask<T>(Option<Tensor<T>>);

impl<T: Scalar> DropoutMask<T> {
    pub fn identity() -> Self {
        Self(None)
    }

    pub fn from_multipliers(m: Tensor<T>) -> Self {
        Self(Some(m))
    }

    pub fn multipliers(&self) -> Option<&Tensor<T>> {
        self.0.as_ref()
    }
}

pub fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Train mode with a positive rate draws one uniform per
/// element from `rng`; everything else is the identity and draws nothing.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    rate: f64,
    rng: &mut Rng,
    mode: Mode,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), DropoutMask::identity()));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let draws = (0..x.len())
        .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
        .collect();
    let mask = Tensor::from_vec(x.shape(), draws)?;
    Ok((x.mul(&mask)?, DropoutMask(Some(mask))))
}

pub fn dropout_backward<T: Scalar>(dy: &Tensor<T>, mask: &DropoutMask<T>) -> Result<Tensor<T>> {
    match &mask.0 {
        None => Ok(dy.clone()),
        Some(m) => dy.mul(m),
    }
}
