//! Layers of the expression-recognition CNN and the model that stacks them.
//!
//! Each layer is available as a pair of free functions (`*_forward`,
//! `*_backward`) operating on explicit tensors; [`Model`] wires them into the
//! `Conv -> BN -> ReLU -> MaxPool -> Dropout` blocks followed by the
//! fully connected head.

mod activation;
mod batchnorm;
mod config;
mod conv;
mod dropout;
mod linear;
mod loss;
mod model;
mod pool;

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BnCache, BnGrads, RunningStats, BN_EPSILON,
    BN_MOMENTUM,
};
pub use config::ModelConfig;
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy};
pub use model::{BatchNorm2d, Conv2d, Layer, Linear, Model};
pub use pool::{maxpool_backward, maxpool_forward, PoolIndices};

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> ParamSlot<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = value.zeros_like();
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}
