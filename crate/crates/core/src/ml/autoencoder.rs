//! Fully connected autoencoder scored by reconstruction error.
//!
//! The encoder follows `hidden_neuron_list`, the decoder mirrors it without
//! repeating the bottleneck, and the output layer is linear:
//! `[16, 8]` on `d` inputs gives `d-16-8-16-d`. Inputs are min-max scaled
//! per column with the fit-time bounds. Dropout (inverted) is applied to
//! hidden activations during training only. The loss is the mean squared
//! error over rows and columns, and the score of a row is its own MSE.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DetectorConfig;
use crate::error::{Error, Result};
use crate::stats;

/// Finite-difference step used by the gradient check.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::param(
                "hidden_activation_name",
                format!("unknown activation `{other}`"),
            )),
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given the pre-activation `z` and its image `a`.
    fn slope(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => f64::from(u8::from(z > 0.0)),
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::param("optimizer_name", format!("unknown optimizer `{other}`"))),
        }
    }

    fn default_rate(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.05,
            OptimizerKind::Momentum => 0.01,
            OptimizerKind::Adam => 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeParams {
    pub epoch_num: usize,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub hidden_neuron_list: Vec<usize>,
    pub hidden_activation: Activation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
}

impl AeParams {
    pub fn from_config(cfg: &DetectorConfig) -> Result<Self> {
        let hidden = cfg.list("hidden_neuron_list", &[16, 8])?;
        if hidden.is_empty() || hidden.iter().any(|&h| h < 1) {
            return Err(Error::param(
                "hidden_neuron_list",
                "must be a non-empty list of positive sizes",
            ));
        }
        let dropout_rate = cfg.real("dropout_rate", 0.1)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::param("dropout_rate", format!("{dropout_rate} outside [0, 1)")));
        }
        let optimizer = OptimizerKind::parse(cfg.text("optimizer_name", "adam")?)?;
        let learning_rate = cfg.real("learning_rate", optimizer.default_rate())?;
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        Ok(AeParams {
            epoch_num: cfg.count("epoch_num", 30)?,
            batch_size: cfg.count("batch_size", 32)?,
            dropout_rate,
            hidden_neuron_list: hidden.into_iter().map(|h| h as usize).collect(),
            hidden_activation: Activation::parse(cfg.text("hidden_activation_name", "relu")?)?,
            optimizer,
            learning_rate,
        })
    }

    /// Layer widths from input to output.
    pub fn layer_sizes(&self, dim: usize) -> Vec<usize> {
        let h = &self.hidden_neuron_list;
        let mut sizes = vec![dim];
        sizes.extend(h);
        sizes.extend(h[..h.len() - 1].iter().rev());
        sizes.push(dim);
        sizes
    }
}

/// Multilayer perceptron with all weights in one flat vector. Layer `l`
/// stores its `out × in` weight matrix row-major followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
    pub hidden: Activation,
}

/// Per-sample forward pass: pre-activations and (masked) activations, with
/// `acts[0]` the input.
struct Trace {
    zs: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn zeros(sizes: &[usize], hidden: Activation) -> Self {
        Mlp {
            sizes: sizes.to_vec(),
            params: vec![0.0; Self::param_count(sizes)],
            hidden,
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, rng: &mut ChaCha8Rng) -> Self {
        let mut net = Self::zeros(sizes, hidden);
        let mut off = 0;
        for w in sizes.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            for p in &mut net.params[off..off + w[0] * w[1]] {
                *p = rng.random_range(-limit..limit);
            }
            off += w[0] * w[1] + w[1];
        }
        net
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_layers());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            out.push(off);
            off += w[0] * w[1] + w[1];
        }
        out
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            Activation::Identity
        } else {
            self.hidden
        }
    }

    fn trace(&self, x: &[f64], masks: Option<&[Vec<f64>]>, offsets: &[usize]) -> Trace {
        let mut zs = Vec::with_capacity(self.n_layers());
        let mut acts = vec![x.to_vec()];
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offsets[l]..offsets[l] + n_in * n_out];
            let b = &self.params[offsets[l] + n_in * n_out..offsets[l] + n_in * n_out + n_out];
            let prev = &acts[l];
            let z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(prev).map(|(a, c)| a * c).sum::<f64>())
                .collect();
            let act = self.activation(l);
            let mut a: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if let Some(m) = masks.and_then(|m| m.get(l)) {
                a.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            zs.push(z);
            acts.push(a);
        }
        Trace { zs, acts }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x, None, &self.offsets()).acts.pop().unwrap_or_default()
    }

    /// Mean squared error over rows and output columns.
    pub fn loss(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let m = inputs.len() as f64 * *self.sizes.last().unwrap_or(&1) as f64;
        inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| self.forward(x).iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum::<f64>())
            .sum::<f64>()
            / m
    }

    /// Loss and its gradient with respect to `params`.
    pub fn loss_gradient(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> (f64, Vec<f64>) {
        self.loss_gradient_masked(inputs, targets, None)
    }

    fn loss_gradient_masked(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        masks: Option<&[Vec<Vec<f64>>]>,
    ) -> (f64, Vec<f64>) {
        let offsets = self.offsets();
        let nl = self.n_layers();
        let scale = 1.0 / (inputs.len() as f64 * *self.sizes.last().unwrap_or(&1) as f64);
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (i, (x, t)) in inputs.iter().zip(targets).enumerate() {
            let mask = masks.map(|m| m[i].as_slice());
            let tr = self.trace(x, mask, &offsets);
            let out = &tr.acts[nl];
            let mut delta: Vec<f64> = out.iter().zip(t).map(|(y, t)| 2.0 * (y - t) * scale).collect();
            loss += out.iter().zip(t).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() * scale;
            for l in (0..nl).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let off = offsets[l];
                let prev = &tr.acts[l];
                for o in 0..n_out {
                    for k in 0..n_in {
                        grad[off + o * n_in + k] += delta[o] * prev[k];
                    }
                    grad[off + n_in * n_out + o] += delta[o];
                }
                if l == 0 {
                    break;
                }
                let w = &self.params[off..off + n_in * n_out];
                let act = self.activation(l - 1);
                let pm = mask.and_then(|m| m.get(l - 1));
                delta = (0..n_in)
                    .map(|k| {
                        let mut g: f64 = (0..n_out).map(|o| w[o * n_in + k] * delta[o]).sum();
                        if let Some(pm) = pm {
                            g *= pm[k];
                        }
                        // unmasked activation is needed for the slope
                        let z = tr.zs[l - 1][k];
                        g * act.slope(z, act.apply(z))
                    })
                    .collect();
            }
        }
        (loss, grad)
    }
}

/// Central finite-difference gradient of the loss.
pub fn numeric_gradient(net: &Mlp, inputs: &[Vec<f64>], targets: &[Vec<f64>], step: f64) -> Vec<f64> {
    let mut probe = net.clone();
    (0..net.params.len())
        .map(|i| {
            let p = net.params[i];
            probe.params[i] = p + step;
            let up = probe.loss(inputs, targets);
            probe.params[i] = p - step;
            let down = probe.loss(inputs, targets);
            probe.params[i] = p;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max |a - n| / max(|a|, |n|, 1e-5)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-5))
        .fold(0.0, f64::max)
}

/// Compares analytic and finite-difference gradients of the reconstruction
/// loss for a freshly initialized network built from `config`, with
/// dropout off.
pub fn autoencoder_gradient_check(config: &DetectorConfig, probe: &[Vec<f64>]) -> Result<f64> {
    let d = probe.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::EmptyInput("gradient check needs probe rows".into()));
    }
    let params = AeParams::from_config(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = Mlp::new(&params.layer_sizes(d), params.hidden_activation, &mut rng);
    let (_, analytic) = net.loss_gradient(probe, probe);
    let numeric = numeric_gradient(&net, probe, probe, FD_STEP);
    Ok(max_relative_error(&analytic, &numeric))
}

enum Optimizer {
    Sgd,
    Momentum { v: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Momentum => Optimizer::Momentum { v: vec![0.0; n] },
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
            }
            Optimizer::Momentum { v } => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(v.iter_mut()) {
                    *v = 0.9 * *v - lr * g;
                    *p += *v;
                }
            }
            Optimizer::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let c1 = 1.0 - B1.powi(*t);
                let c2 = 1.0 - B2.powi(*t);
                for (i, (p, g)) in params.iter_mut().zip(grad).enumerate() {
                    m[i] = B1 * m[i] + (1.0 - B1) * g;
                    v[i] = B2 * v[i] + (1.0 - B2) * g * g;
                    *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeModel {
    pub net: Mlp,
    pub bounds: Vec<(f64, f64)>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl AeModel {
    fn scale(&self, x: &[f64]) -> Vec<f64> {
        scale_row(x, &self.bounds)
    }

    pub fn fit(params: &AeParams, rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        let d = rows[0].len();
        let bounds: Vec<(f64, f64)> = (0..d)
            .map(|j| stats::min_max(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect();
        let data: Vec<Vec<f64>> = rows.iter().map(|r| scale_row(r, &bounds)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = params.layer_sizes(d);
        let mut net = Mlp::new(&sizes, params.hidden_activation, &mut rng);
        let mut opt = Optimizer::new(params.optimizer, net.params.len());
        let keep = 1.0 - params.dropout_rate;
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut loss_history = Vec::with_capacity(params.epoch_num);
        for _ in 0..params.epoch_num {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(params.batch_size) {
                let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| data[i].clone()).collect();
                let masks: Option<Vec<Vec<Vec<f64>>>> = (params.dropout_rate > 0.0).then(|| {
                    chunk
                        .iter()
                        .map(|_| {
                            sizes[1..sizes.len() - 1]
                                .iter()
                                .map(|&w| {
                                    (0..w)
                                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                });
                let (loss, grad) = net.loss_gradient_masked(&batch, &batch, masks.as_deref());
                epoch_loss += loss * chunk.len() as f64;
                opt.step(&mut net.params, &grad, params.learning_rate);
            }
            loss_history.push(epoch_loss / data.len() as f64);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Range("autoencoder training diverged".into()));
        }
        Ok(AeModel {
            net,
            bounds,
            loss_history,
        })
    }

    pub fn score(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter()
            .map(|r| {
                let x = self.scale(r);
                let y = self.net.forward(&x);
                x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
            })
            .collect()
    }
}

fn scale_row(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, &(lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
        .collect()
}
