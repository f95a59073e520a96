//! Central finite differences against the analytic gradients, in f64.
//!
//! The whole-model check perturbs every parameter of a small network in
//! train mode (batch statistics in BN, dropout disabled) and differentiates
//! the mean cross-entropy at a random parameter point: biases, BN scales
//! and shifts are re-drawn so that no activation sits on a ReLU kink. The
//! isolated checks exercise each layer function on its own against the
//! objective `sum(y * r)` for a random `r`.

use crate::error::Result;
use crate::nn::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, dropout_backward,
    dropout_forward, linear_backward, linear_forward, maxpool_backward, maxpool_forward,
    relu_backward, relu_forward, softmax_cross_entropy, Mode, Model, ModelConfig, RunningStats,
};
use crate::tensor::{Fill, Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub batch: usize,
    /// Number of seeds, `0..seeds`.
    pub seeds: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Feed all-zero images to the whole-model check.
    pub zero_input: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            batch: 2,
            seeds: 10,
            step: 1e-5,
            tolerance: 1e-3,
            zero_input: false,
        }
    }
}

/// Worst relative error seen for one layer type.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    /// `"model"` for the whole-network check, `"layer"` for isolated ones.
    pub scope: &'static str,
    pub group: &'static str,
    pub max_rel: f64,
    /// Number of gradient entries compared.
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self, scope: &str) -> f64 {
        self.groups
            .iter()
            .filter(|g| g.scope == scope)
            .map(|g| g.max_rel)
            .fold(0.0, f64::max)
    }

    /// Every group under the tolerance (NaN counts as failure).
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel < self.tolerance)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Default)]
struct Tally {
    groups: Vec<GroupError>,
}

impl Tally {
    fn record(&mut self, scope: &'static str, group: &'static str, analytic: &[f64], numeric: &[f64]) {
        let worst = analytic
            .iter()
            .zip(numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, |m: f64, e| if e.is_nan() { f64::NAN } else { m.max(e) });
        match self
            .groups
            .iter_mut()
            .find(|g| g.scope == scope && g.group == group)
        {
            Some(g) => {
                g.max_rel = if worst.is_nan() { worst } else { g.max_rel.max(worst) };
                g.checked += analytic.len();
            }
            None => self.groups.push(GroupError {
                scope,
                group,
                max_rel: worst,
                checked: analytic.len(),
            }),
        }
    }
}

pub fn gradient_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut tally = Tally::default();
    for seed in 0..config.seeds {
        check_model(config, seed, &mut tally)?;
        check_layers(config.step, seed, &mut tally)?;
    }
    Ok(GradCheckReport {
        groups: tally.groups,
        tolerance: config.tolerance,
    })
}

fn group_of(slot: &str) -> &'static str {
    if slot.starts_with("conv") {
        "conv"
    } else if slot.starts_with("bn") {
        "bn"
    } else {
        "linear"
    }
}

fn check_model(config: &GradCheckConfig, seed: u64, tally: &mut Tally) -> Result<()> {
    let mut rng = Rng::seed(seed);
    let mut model = Model::<f64>::build(&config.model, &mut rng)?;
    model.set_dropout_rate(0.0)?;
    model.set_mode(Mode::Train);
    // Biases and BN shifts start at zero, which parks every ReLU on its kink
    // for constant inputs; move to a generic point first.
    for slot in model.params_mut() {
        if slot.name.ends_with(".gamma") {
            slot.value = Tensor::create(slot.value.shape(), Fill::Uniform { low: 0.5, high: 1.5 }, &mut rng)?;
        } else if slot.name.ends_with(".beta") || slot.name.ends_with(".bias") {
            slot.value = Tensor::create(slot.value.shape(), Fill::Normal { mean: 0.0, std: 0.5 }, &mut rng)?;
        }
    }
    let [c, h, w] = config.model.input_shape;
    let shape = [config.batch, c, h, w];
    let x = if config.zero_input {
        Tensor::zeros(&shape)?
    } else {
        Tensor::create(&shape, Fill::Uniform { low: 0.0, high: 1.0 }, &mut rng)?
    };
    let labels: Vec<usize> = (0..config.batch)
        .map(|_| rng.below(config.model.num_classes))
        .collect();

    let mut loss_at = |model: &mut Model<f64>| -> Result<f64> {
        let logits = model.forward(&x, &mut rng)?;
        model.clear_caches();
        Ok(softmax_cross_entropy(&logits, &labels)?.0)
    };

    model.zero_grad();
    let logits = model.forward(&x, &mut Rng::seed(0))?;
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels)?;
    model.backward(&dlogits)?;
    let slots: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    for (j, (name, analytic)) in slots.iter().enumerate() {
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = model.params()[j].value.data()[i];
            model.params_mut()[j].value.data_mut()[i] = orig + config.step;
            let up = loss_at(&mut model)?;
            model.params_mut()[j].value.data_mut()[i] = orig - config.step;
            let down = loss_at(&mut model)?;
            model.params_mut()[j].value.data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * config.step));
        }
        tally.record("model", group_of(name), analytic, &numeric);
    }
    Ok(())
}

/// Numeric gradient of `f` with respect to every entry of `inputs[k]`.
fn numeric_grad(
    inputs: &mut [Tensor<f64>],
    k: usize,
    step: f64,
    f: &mut impl FnMut(&[Tensor<f64>]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs[k].len());
    for i in 0..inputs[k].len() {
        let orig = inputs[k].data()[i];
        inputs[k].data_mut()[i] = orig + step;
        let up = f(inputs)?;
        inputs[k].data_mut()[i] = orig - step;
        let down = f(inputs)?;
        inputs[k].data_mut()[i] = orig;
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    y.dot(r)
}

fn normal(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    Tensor::create(shape, Fill::Normal { mean: 0.0, std: 1.0 }, rng)
}

fn check_layers(step: f64, seed: u64, tally: &mut Tally) -> Result<()> {
    let mut rng = Rng::seed(1000 + seed);

    // convolution with padding, one weight/bias/input triple
    let mut t = vec![
        normal(&[2, 3, 5, 5], &mut rng)?,
        normal(&[4, 3, 3, 3], &mut rng)?,
        normal(&[4], &mut rng)?,
    ];
    let r = normal(&[2, 4, 5, 5], &mut rng)?;
    let g = conv2d_backward(&r, &t[0], &t[1], 1, 1)?;
    let mut f = |t: &[Tensor<f64>]| weighted_sum(&conv2d_forward(&t[0], &t[1], &t[2], 1, 1)?, &r);
    for (k, a) in [g.dx, g.dweight, g.dbias].iter().enumerate() {
        let n = numeric_grad(&mut t, k, step, &mut f)?;
        tally.record("layer", "conv", a.data(), &n);
    }

    // batch norm, train mode
    let mut t = vec![
        normal(&[3, 2, 3, 3], &mut rng)?,
        normal(&[2], &mut rng)?,
        normal(&[2], &mut rng)?,
    ];
    let r = normal(&[3, 2, 3, 3], &mut rng)?;
    let (_, cache) = batchnorm_forward(&t[0], &t[1], &t[2], &mut RunningStats::new(2)?, Mode::Train)?;
    let g = batchnorm_backward(&r, &t[1], &cache)?;
    let mut f = |t: &[Tensor<f64>]| {
        let (y, _) = batchnorm_forward(&t[0], &t[1], &t[2], &mut RunningStats::new(2)?, Mode::Train)?;
        weighted_sum(&y, &r)
    };
    for (k, a) in [g.dx, g.dgamma, g.dbeta].iter().enumerate() {
        let n = numeric_grad(&mut t, k, step, &mut f)?;
        tally.record("layer", "bn", a.data(), &n);
    }

    // fully connected
    let mut t = vec![
        normal(&[3, 5], &mut rng)?,
        normal(&[5, 4], &mut rng)?,
        normal(&[4], &mut rng)?,
    ];
    let r = normal(&[3, 4], &mut rng)?;
    let g = linear_backward(&r, &t[0], &t[1])?;
    let mut f = |t: &[Tensor<f64>]| weighted_sum(&linear_forward(&t[0], &t[1], &t[2])?, &r);
    for (k, a) in [g.dx, g.dweight, g.dbias].iter().enumerate() {
        let n = numeric_grad(&mut t, k, step, &mut f)?;
        tally.record("layer", "linear", a.data(), &n);
    }

    // max pool on distinct values
    let mut t = vec![normal(&[2, 2, 4, 4], &mut rng)?];
    let r = normal(&[2, 2, 2, 2], &mut rng)?;
    let (_, idx) = maxpool_forward(&t[0], 2, 2)?;
    let a = maxpool_backward(&r, &idx)?;
    let mut f = |t: &[Tensor<f64>]| weighted_sum(&maxpool_forward(&t[0], 2, 2)?.0, &r);
    let n = numeric_grad(&mut t, 0, step, &mut f)?;
    tally.record("layer", "pool", a.data(), &n);

    // relu, inputs kept away from the kink
    let x = normal(&[3, 7], &mut rng)?.map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
    let mut t = vec![x];
    let r = normal(&[3, 7], &mut rng)?;
    let a = relu_backward(&r, &t[0])?;
    let mut f = |t: &[Tensor<f64>]| weighted_sum(&relu_forward(&t[0]), &r);
    let n = numeric_grad(&mut t, 0, step, &mut f)?;
    tally.record("layer", "relu", a.data(), &n);

    // dropout in eval mode is the identity
    let mut t = vec![normal(&[2, 3, 2, 2], &mut rng)?];
    let r = normal(&[2, 3, 2, 2], &mut rng)?;
    let (_, mask) = dropout_forward(&t[0], 0.5, &mut Rng::seed(seed), Mode::Eval)?;
    let a = dropout_backward(&r, &mask)?;
    let mut f = |t: &[Tensor<f64>]| {
        let (y, _) = dropout_forward(&t[0], 0.5, &mut Rng::seed(seed), Mode::Eval)?;
        weighted_sum(&y, &r)
    };
    let n = numeric_grad(&mut t, 0, step, &mut f)?;
    tally.record("layer", "dropout-off", a.data(), &n);

    // softmax cross-entropy
    let mut t = vec![normal(&[3, 7], &mut rng)?.scale(3.0)];
    let labels: Vec<usize> = (0..3).map(|_| rng.below(7)).collect();
    let (_, a) = softmax_cross_entropy(&t[0], &labels)?;
    let mut f = |t: &[Tensor<f64>]| Ok(softmax_cross_entropy(&t[0], &labels)?.0);
    let n = numeric_grad(&mut t, 0, step, &mut f)?;
    tally.record("layer", "loss", a.data(), &n);
    Ok(())
}
