//! Plain SGD with time-based learning-rate decay, and Adam.
//!
//! Both optimizers validate every gradient before touching any parameter:
//! a non-finite entry aborts the step with the offending slot's name and
//! leaves values and optimizer state unchanged. Gradients are never
//! modified here; zeroing them is the training loop's job.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamSlot;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

fn check_finite<T: Scalar>(slots: &[&mut ParamSlot<T>]) -> Result<()> {
    for slot in slots {
        let count = slot.grad.data().iter().filter(|v| !v.is_finite()).count();
        if count > 0 {
            return Err(Error::NonFiniteGradient {
                slot: slot.name.clone(),
                count,
            });
        }
    }
    Ok(())
}

/// SGD without momentum; `lr_t = base_lr / (1 + decay * t)` where `t` is the
/// number of updates already applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub base_lr: f64,
    pub decay: f64,
    pub step_count: u64,
}

impl Sgd {
    pub fn new(base_lr: f64, decay: f64) -> Result<Self> {
        if !(base_lr >= 0.0 && base_lr.is_finite()) || !(decay >= 0.0 && decay.is_finite()) {
            return Err(Error::config(format!(
                "sgd needs finite lr >= 0 and decay >= 0, got lr {base_lr}, decay {decay}"
            )));
        }
        Ok(Self {
            base_lr,
            decay,
            step_count: 0,
        })
    }

    pub fn effective_lr(&self) -> f64 {
        self.base_lr / (1.0 + self.decay * self.step_count as f64)
    }

    pub fn step<T: Scalar>(&mut self, slots: &mut [&mut ParamSlot<T>]) -> Result<()> {
        check_finite(slots)?;
        let lr = T::from_f64_lossy(self.effective_lr());
        for slot in slots.iter_mut() {
            let ParamSlot { value, grad, .. } = &mut **slot;
            value.axpy(-lr, grad)?;
        }
        self.step_count += 1;
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step, one pair per slot in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    moments: Vec<Moments<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub name: String,
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

impl<T: Scalar> Adam<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    pub fn new(lr: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("adam needs a finite lr >= 0, got {lr}")));
        }
        Ok(Self {
            lr,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            epsilon: Self::EPSILON,
            step_count: 0,
            moments: Vec::new(),
        })
    }

    pub fn moments(&self) -> &[Moments<T>] {
        &self.moments
    }

    /// Restores moment buffers, e.g. from a checkpoint.
    pub fn set_moments(&mut self, moments: Vec<Moments<T>>) {
        self.moments = moments;
    }

    fn ensure_moments(&mut self, slots: &[&mut ParamSlot<T>]) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = slots
                .iter()
                .map(|s| Moments {
                    name: s.name.clone(),
                    first: s.value.zeros_like(),
                    second: s.value.zeros_like(),
                })
                .collect();
        }
        let matches = self.moments.len() == slots.len()
            && self
                .moments
                .iter()
                .zip(slots)
                .all(|(m, s)| m.name == s.name && m.first.shape() == s.value.shape());
        if !matches {
            return Err(Error::Usage(
                "adam moment buffers do not match the parameter slots".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&mut self, slots: &mut [&mut ParamSlot<T>]) -> Result<()> {
        check_finite(slots)?;
        self.ensure_moments(slots)?;
        let t = (self.step_count + 1) as i32;
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let lr = T::from_f64_lossy(self.lr);
        let eps = T::from_f64_lossy(self.epsilon);
        for (slot, mom) in slots.iter_mut().zip(&mut self.moments) {
            let ParamSlot { value, grad, .. } = &mut **slot;
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(mom.first.data_mut())
                .zip(mom.second.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step_count += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer<T = f32> {
    Sgd(Sgd),
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    /// `decay` applies to SGD only.
    pub fn new(kind: OptimizerKind, lr: f64, decay: f64) -> Result<Self> {
        Ok(match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(lr, decay)?),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr)?),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Optimizer::Sgd(_) => OptimizerKind::Sgd,
            Optimizer::Adam(_) => OptimizerKind::Adam,
        }
    }

    pub fn step(&mut self, slots: &mut [&mut ParamSlot<T>]) -> Result<()> {
        match self {
            Optimizer::Sgd(s) => s.step(slots),
            Optimizer::Adam(a) => a.step(slots),
        }
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        match self {
            Optimizer::Sgd(s) => s.effective_lr(),
            Optimizer::Adam(a) => a.lr,
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Sgd(s) => s.step_count,
            Optimizer::Adam(a) => a.step_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slot(name: &str, value: &[f64], grad: &[f64]) -> ParamSlot<f64> {
        let mut s = ParamSlot::new(name, Tensor::from_vec(&[value.len()], value.to_vec()).unwrap());
        s.grad = Tensor::from_vec(&[grad.len()], grad.to_vec()).unwrap();
        s
    }

    #[test]
    fn sgd_schedule() {
        let mut sgd = Sgd::new(0.05, 1e-5).unwrap();
        assert_eq!(sgd.effective_lr(), 0.05);
        sgd.step_count = 100_000;
        assert!((sgd.effective_lr() - 0.025).abs() < 1e-15);
        let mut flat = Sgd::new(0.05, 0.0).unwrap();
        flat.step_count = 1_000_000;
        assert_eq!(flat.effective_lr(), 0.05);
    }

    #[test]
    fn sgd_single_step() {
        let mut s = slot("w", &[1.0], &[2.0]);
        let mut sgd = Sgd::new(0.05, 1e-5).unwrap();
        sgd.step(&mut [&mut s]).unwrap();
        assert!((s.value.data()[0] - 0.9).abs() < 1e-15);
        assert_eq!(s.grad.data(), &[2.0]);
        assert_eq!(sgd.step_count, 1);
        assert!(sgd.effective_lr() < 0.05);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut a = slot("fc1.weight", &[1.0, 2.0], &[0.5, 0.5]);
        let mut b = slot("fc1.bias", &[3.0], &[f64::NAN]);
        let mut sgd = Sgd::new(0.05, 0.0).unwrap();
        let err = sgd.step(&mut [&mut a, &mut b]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { ref slot, count: 1 } if slot == "fc1.bias"));
        assert_eq!(a.value.data(), &[1.0, 2.0]);
        assert_eq!(sgd.step_count, 0);

        let mut adam = Adam::new(0.05).unwrap();
        b.grad.data_mut()[0] = f64::INFINITY;
        assert!(matches!(
            adam.step(&mut [&mut a, &mut b]),
            Err(Error::NonFiniteGradient { .. })
        ));
        assert_eq!(a.value.data(), &[1.0, 2.0]);
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = slot("w", &[0.0, 0.0, 0.0], &[3.0, -0.002, 1e4]);
        let mut adam = Adam::new(0.05).unwrap();
        adam.step(&mut [&mut s]).unwrap();
        for (&w, &g) in s.value.data().iter().zip(s.grad.data()) {
            assert!((w + 0.05 * g.signum()).abs() < 1e-6);
            assert!(w.abs() <= 0.05 * (1.0 + 1e-6));
        }
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut s = slot("w", &[1.5, -2.0], &[0.0, 0.0]);
        let mut adam = Adam::new(0.05).unwrap();
        adam.step(&mut [&mut s]).unwrap();
        assert_eq!(s.value.data(), &[1.5, -2.0]);
        assert!(adam.moments()[0].first.data().iter().all(|&v| v == 0.0));
        assert!(adam.moments()[0].second.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_matches_scalar_reference_on_quadratic() {
        // independent scalar Adam on f(w) = w^2
        let (lr, b1, b2, eps) = (0.1f64, 0.9f64, 0.999f64, 1e-8f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
            reference.push(w);
        }

        let mut s = slot("w", &[1.0], &[0.0]);
        let mut adam = Adam::new(0.1).unwrap();
        for &expected in &reference {
            s.grad.data_mut()[0] = 2.0 * s.value.data()[0];
            adam.step(&mut [&mut s]).unwrap();
            assert!((s.value.data()[0] - expected).abs() < 1e-6);
        }
        assert_eq!(adam.step_count, 10);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("SGD".parse::<OptimizerKind>().unwrap(), OptimizerKind::Sgd);
        assert_eq!("adam".parse::<OptimizerKind>().unwrap(), OptimizerKind::Adam);
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
