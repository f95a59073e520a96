use super::activation::{relu_backward, relu_forward};
use super::batchnorm::{batchnorm_backward, batchnorm_forward, BnCache, RunningStats};
use super::conv::{conv2d_backward, conv2d_forward};
use super::dropout::{dropout_backward, dropout_forward, DropoutMask};
use super::linear::{linear_backward, linear_forward};
use super::pool::{maxpool_backward, maxpool_forward, PoolIndices};
use super::{Mode, ModelConfig, ParamSlot};
use crate::error::{Error, Result};
use crate::tensor::{Fill, Rng, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: ParamSlot<T>,
    pub bias: ParamSlot<T>,
    pub padding: usize,
    input: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub name: String,
    pub gamma: ParamSlot<T>,
    pub beta: ParamSlot<T>,
    pub running: RunningStats<T>,
    cache: Option<BnCache<T>>,
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: ParamSlot<T>,
    pub bias: ParamSlot<T>,
    input: Option<Tensor<T>>,
}

/// One stage of the network together with whatever its backward pass needs.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu { input: Option<Tensor<T>> },
    MaxPool { size: usize, stride: usize, indices: Option<PoolIndices> },
    Dropout { rate: f64, mask: Option<DropoutMask<T>> },
    Flatten { input_shape: Option<Vec<usize>> },
    Linear(Linear<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu { .. } => "relu",
            Layer::MaxPool { .. } => "pool",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten { .. } => "flatten",
            Layer::Linear(_) => "linear",
        }
    }

    fn forward(&mut self, x: Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => {
                let y = conv2d_forward(&x, &c.weight.value, &c.bias.value, 1, c.padding)?;
                c.input = Some(x);
                Ok(y)
            }
            Layer::BatchNorm(bn) => {
                let (y, cache) =
                    batchnorm_forward(&x, &bn.gamma.value, &bn.beta.value, &mut bn.running, mode)?;
                bn.cache = Some(cache);
                Ok(y)
            }
            Layer::Relu { input } => {
                let y = relu_forward(&x);
                *input = Some(x);
                Ok(y)
            }
            Layer::MaxPool {
                size,
                stride,
                indices,
            } => {
                let (y, idx) = maxpool_forward(&x, *size, *stride)?;
                *indices = Some(idx);
                Ok(y)
            }
            Layer::Dropout { rate, mask } => {
                let (y, m) = dropout_forward(&x, *rate, rng, mode)?;
                *mask = Some(m);
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                let shape = x.shape().to_vec();
                let features = shape[1..].iter().product::<usize>();
                *input_shape = Some(shape.clone());
                x.reshape(&[shape[0], features])
            }
            Layer::Linear(l) => {
                let y = linear_forward(&x, &l.weight.value, &l.bias.value)?;
                l.input = Some(x);
                Ok(y)
            }
        }
    }

    /// Consumes the saved forward state, accumulates parameter gradients,
    /// and returns the gradient with respect to the layer input.
    fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let kind = self.kind();
        let missing =
            || Error::Usage(format!("backward through `{kind}` without a saved forward pass"));
        match self {
            Layer::Conv(c) => {
                let x = c.input.take().ok_or_else(missing)?;
                let g = conv2d_backward(&dy, &x, &c.weight.value, 1, c.padding)?;
                c.weight.grad.axpy(T::one(), &g.dweight)?;
                c.bias.grad.axpy(T::one(), &g.dbias)?;
                Ok(g.dx)
            }
            Layer::BatchNorm(bn) => {
                let cache = bn.cache.take().ok_or_else(missing)?;
                let g = batchnorm_backward(&dy, &bn.gamma.value, &cache)?;
                bn.gamma.grad.axpy(T::one(), &g.dgamma)?;
                bn.beta.grad.axpy(T::one(), &g.dbeta)?;
                Ok(g.dx)
            }
            Layer::Relu { input } => {
                let x = input.take().ok_or_else(missing)?;
                relu_backward(&dy, &x)
            }
            Layer::MaxPool { indices, .. } => {
                let idx = indices.take().ok_or_else(missing)?;
                maxpool_backward(&dy, &idx)
            }
            Layer::Dropout { mask, .. } => {
                let m = mask.take().ok_or_else(missing)?;
                dropout_backward(&dy, &m)
            }
            Layer::Flatten { input_shape } => {
                let shape = input_shape.take().ok_or_else(missing)?;
                dy.reshape(&shape)
            }
            Layer::Linear(l) => {
                let x = l.input.take().ok_or_else(missing)?;
                let g = linear_backward(&dy, &x, &l.weight.value)?;
                l.weight.grad.axpy(T::one(), &g.dweight)?;
                l.bias.grad.axpy(T::one(), &g.dbias)?;
                Ok(g.dx)
            }
        }
    }

    /// Eval-mode forward that saves nothing.
    fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => conv2d_forward(&x, &c.weight.value, &c.bias.value, 1, c.padding),
            Layer::BatchNorm(bn) => {
                let mut running = bn.running.clone();
                let (y, _) = batchnorm_forward(
                    &x,
                    &bn.gamma.value,
                    &bn.beta.value,
                    &mut running,
                    Mode::Eval,
                )?;
                Ok(y)
            }
            Layer::Relu { .. } => Ok(relu_forward(&x)),
            Layer::MaxPool { size, stride, .. } => Ok(maxpool_forward(&x, *size, *stride)?.0),
            Layer::Dropout { .. } => Ok(x),
            Layer::Flatten { .. } => {
                let features = x.shape()[1..].iter().product::<usize>();
                let b = x.shape()[0];
                x.reshape(&[b, features])
            }
            Layer::Linear(l) => linear_forward(&x, &l.weight.value, &l.bias.value),
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => c.input = None,
            Layer::BatchNorm(bn) => bn.cache = None,
            Layer::Relu { input } => *input = None,
            Layer::MaxPool { indices, .. } => *indices = None,
            Layer::Dropout { mask, .. } => *mask = None,
            Layer::Flatten { input_shape } => *input_shape = None,
            Layer::Linear(l) => l.input = None,
        }
    }
}

/// The instantiated layer stack with its parameter registry.
#[derive(Debug, Clone)]
pub struct Model<T = f32> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
    mode: Mode,
}

fn he_normal<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::create(shape, Fill::Normal { mean: 0.0, std }, rng)
}

impl<T: Scalar> Model<T> {
    /// Builds the block-structured CNN described by `config`.
    ///
    /// Weights are He-normal (`std = sqrt(2 / fan_in)`), drawn layer by layer
    /// from `rng`; biases and BN shifts start at 0, BN scales at 1.
    pub fn build(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let k = config.kernel;
        let mut layers = Vec::new();
        let mut cin = config.input_shape[0];
        for (i, &cout) in config.conv_channels.iter().enumerate() {
            let n = i + 1;
            let weight = he_normal(&[cout, cin, k, k], cin * k * k, rng)?;
            layers.push(Layer::Conv(Conv2d {
                weight: ParamSlot::new(format!("conv{n}.weight"), weight),
                bias: ParamSlot::new(format!("conv{n}.bias"), Tensor::zeros(&[cout])?),
                padding: config.conv_padding,
                input: None,
            }));
            layers.push(Layer::BatchNorm(BatchNorm2d {
                name: format!("bn{n}"),
                gamma: ParamSlot::new(format!("bn{n}.gamma"), Tensor::full(&[cout], T::one())?),
                beta: ParamSlot::new(format!("bn{n}.beta"), Tensor::zeros(&[cout])?),
                running: RunningStats::new(cout)?,
                cache: None,
            }));
            layers.push(Layer::Relu { input: None });
            layers.push(Layer::MaxPool {
                size: config.pool_size,
                stride: config.pool_stride,
                indices: None,
            });
            layers.push(Layer::Dropout {
                rate: config.dropout_rate,
                mask: None,
            });
            cin = cout;
        }
        layers.push(Layer::Flatten { input_shape: None });
        let flat = config.flatten_size()?;
        let dims = [
            (flat, config.hidden_units),
            (config.hidden_units, config.num_classes),
        ];
        for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let n = i + 1;
            let weight = he_normal(&[fan_in, fan_out], fan_in, rng)?;
            layers.push(Layer::Linear(Linear {
                weight: ParamSlot::new(format!("fc{n}.weight"), weight),
                bias: ParamSlot::new(format!("fc{n}.bias"), Tensor::zeros(&[fan_out])?),
                input: None,
            }));
            if n == 1 {
                layers.push(Layer::Relu { input: None });
            }
        }
        Ok(Self {
            config: config.clone(),
            layers,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Overrides the dropout rate of every dropout layer.
    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        super::dropout::check_rate(rate)?;
        for layer in &mut self.layers {
            if let Layer::Dropout { rate: r, .. } = layer {
                *r = rate;
            }
        }
        Ok(())
    }

    /// `[B, C, H, W] -> [B, classes]` logits. Saves what [`Model::backward`]
    /// needs; `rng` is only drawn from by train-mode dropout.
    pub fn forward(&mut self, x: &Tensor<T>, rng: &mut Rng) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut act = x.clone();
        for layer in &mut self.layers {
            act = layer.forward(act, mode, rng)?;
        }
        Ok(act)
    }

    /// Eval-mode logits without touching any layer state, so it can run
    /// concurrently on shared references. Equal to [`Model::forward`] in
    /// [`Mode::Eval`].
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut act = x.clone();
        for layer in &self.layers {
            act = layer.infer(act)?;
        }
        Ok(act)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [c, h, w] = self.config.input_shape;
        match x.shape() {
            &[_, xc, xh, xw] if [xc, xh, xw] == [c, h, w] => Ok(()),
            s => Err(Error::shape(format!(
                "model expects [B, {c}, {h}, {w}] input, got {s:?}"
            ))),
        }
    }

    /// Back-propagates `dlogits`, adding into every slot's gradient.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let mut grad = dlogits.clone();
        for i in (0..self.layers.len()).rev() {
            match self.layers[i].backward(grad) {
                Ok(g) => grad = g,
                Err(e) => {
                    // leave no half-consumed forward state behind
                    self.clear_caches();
                    return Err(e);
                }
            }
        }
        Ok(grad)
    }

    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn zero_grad(&mut self) {
        for slot in self.params_mut() {
            slot.grad.fill(T::zero());
        }
    }

    /// Parameter slots in model order.
    pub fn params(&self) -> Vec<&ParamSlot<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::BatchNorm(bn) => out.extend([&bn.gamma, &bn.beta]),
                Layer::Linear(l) => out.extend([&l.weight, &l.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamSlot<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::BatchNorm(bn) => out.extend([&mut bn.gamma, &mut bn.beta]),
                Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
                _ => {}
            }
        }
        out
    }

    /// Non-trainable state (BN running statistics) as named tensors.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("{}.running_mean", bn.name), &bn.running.mean));
                out.push((format!("{}.running_var", bn.name), &bn.running.var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                out.push((format!("{}.running_mean", bn.name), &mut bn.running.mean));
                out.push((format!("{}.running_var", bn.name), &mut bn.running.var));
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_sixteen_named_slots() {
        let model = Model::<f32>::build(&ModelConfig::default(), &mut Rng::seed(0)).unwrap();
        let names: Vec<&str> = model.params().iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "conv1.weight", "conv1.bias", "bn1.gamma", "bn1.beta",
                "conv2.weight", "conv2.bias", "bn2.gamma", "bn2.beta",
                "conv3.weight", "conv3.bias", "bn3.gamma", "bn3.beta",
                "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
            ]
        );
        let shapes: Vec<&[usize]> = model.params().iter().map(|p| p.value.shape()).collect();
        assert_eq!(shapes[0], &[64, 1, 3, 3]);
        assert_eq!(shapes[8], &[256, 128, 3, 3]);
        assert_eq!(shapes[12], &[9216, 256]);
        assert_eq!(shapes[14], &[256, 7]);
        for p in model.params() {
            assert_eq!(p.value.shape(), p.grad.shape());
        }
        assert_eq!(model.buffers().len(), 6);
    }

    #[test]
    fn layer_order() {
        let model = Model::<f64>::build(&ModelConfig::tiny(), &mut Rng::seed(0)).unwrap();
        let kinds: Vec<&str> = model.layers().iter().map(Layer::kind).collect();
        let block = ["conv", "bn", "relu", "pool", "dropout"];
        let mut expected: Vec<&str> = block.iter().cycle().take(15).copied().collect();
        expected.extend(["flatten", "linear", "relu", "linear"]);
        assert_eq!(kinds, expected);
    }

    #[test]
    fn init_statistics() {
        let model = Model::<f64>::build(&ModelConfig::default(), &mut Rng::seed(3)).unwrap();
        let p = model.params();
        let w = &p[8].value; // conv3.weight, fan-in 128*9
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-3);
        assert!((var / (2.0 / 1152.0) - 1.0).abs() < 0.02);
        assert!(p[9].value.data().iter().all(|&v| v == 0.0));
        assert!(p[10].value.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forward_shapes_and_backward_contract() {
        let cfg = ModelConfig::tiny();
        let mut rng = Rng::seed(1);
        let mut model = Model::<f64>::build(&cfg, &mut rng).unwrap();
        let x = Tensor::create(&[3, 1, 8, 8], Fill::Uniform { low: 0.0, high: 1.0 }, &mut rng)
            .unwrap();
        let logits = model.forward(&x, &mut rng).unwrap();
        assert_eq!(logits.shape(), &[3, 7]);
        let dx = model.backward(&logits.zeros_like()).unwrap();
        assert_eq!(dx.shape(), x.shape());
        // the saved state was consumed
        assert!(matches!(
            model.backward(&logits.zeros_like()),
            Err(Error::Usage(_))
        ));
        let bad = Tensor::zeros(&[1, 1, 9, 9]).unwrap();
        assert!(model.forward(&bad, &mut rng).is_err());
    }
}
