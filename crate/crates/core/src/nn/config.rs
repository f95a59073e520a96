use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ConvGeometry;

/// Declarative description of the block-structured CNN.
///
/// Each entry of `conv_channels` becomes one block
/// `Conv(k x k, pad) -> BatchNorm -> ReLU -> MaxPool -> Dropout`; the blocks
/// are followed by `Flatten -> Linear(hidden) -> ReLU -> Linear(classes)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// `[channels, height, width]` of one input image.
    pub input_shape: [usize; 3],
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub conv_padding: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub dropout_rate: f64,
    pub hidden_units: usize,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    /// 48x48 grayscale input, 64/128/256 3x3 filters, 2x2 pooling, dropout
    /// 0.2, 256 hidden units, 7 expression classes.
    fn default() -> Self {
        Self {
            input_shape: [1, 48, 48],
            conv_channels: vec![64, 128, 256],
            kernel: 3,
            conv_padding: 1,
            pool_size: 2,
            pool_stride: 2,
            dropout_rate: 0.2,
            hidden_units: 256,
            num_classes: 7,
        }
    }
}

impl ModelConfig {
    /// 8x8 input with channels `[2, 3, 4]` and 5 hidden units; small enough
    /// for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            input_shape: [1, 8, 8],
            conv_channels: vec![2, 3, 4],
            hidden_units: 5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() {
            return Err(Error::config("conv_channels must not be empty"));
        }
        if self.conv_channels.contains(&0) || self.input_shape.contains(&0) {
            return Err(Error::config("channel counts and input extents must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.hidden_units == 0 {
            return Err(Error::config("hidden_units must be >= 1"));
        }
        self.shape_trace().map(|_| ())
    }

    /// Per-block convolution and pooling geometries.
    pub(crate) fn block_geometries(&self) -> Result<Vec<(ConvGeometry, ConvGeometry)>> {
        let [mut c, mut h, mut w] = self.input_shape;
        let mut out = Vec::with_capacity(self.conv_channels.len());
        for (i, &cout) in self.conv_channels.iter().enumerate() {
            let conv = ConvGeometry::new(c, h, w, self.kernel, 1, self.conv_padding)
                .map_err(|e| Error::config(format!("block {}: convolution {e}", i + 1)))?;
            let pool = ConvGeometry::new(
                cout,
                conv.out_height(),
                conv.out_width(),
                self.pool_size,
                self.pool_stride,
                0,
            )
            .map_err(|e| Error::config(format!("block {}: pooling {e}", i + 1)))?;
            c = cout;
            h = pool.out_height();
            w = pool.out_width();
            out.push((conv, pool));
        }
        Ok(out)
    }

    /// `[C, H, W]` after the input and after each block.
    pub fn shape_trace(&self) -> Result<Vec<[usize; 3]>> {
        let mut trace = vec![self.input_shape];
        for (_, pool) in self.block_geometries()? {
            trace.push([pool.channels, pool.out_height(), pool.out_width()]);
        }
        Ok(trace)
    }

    /// Width of the flattened feature vector entering the hidden layer.
    pub fn flatten_size(&self) -> Result<usize> {
        let last = *self.shape_trace()?.last().expect("trace has the input");
        Ok(last.iter().product())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}
