//! Fully connected binary classifier trained with Adam on a summed softmax
//! cross-entropy loss.
//!
//! Batches are stored column-wise: a batch of `n` samples of width `d` is a
//! `d × n` matrix, so each layer computes `Z = W·A + b`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::baselines::{check_xy, Probs};
use crate::error::{Error, Result};

pub const N_CLASSES: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const ELU_ALPHA: f64 = 1.0;
pub const ADAM_EPS: f64 = 1e-8;
const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Elu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::LeakyRelu, Activation::Elu];

    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    ELU_ALPHA * z.exp_m1()
                }
            }
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * z.exp()
                }
            }
        }
    }
}

/// `n_layers` hidden layers of `n_neuron` units each, then a 2-way softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub n_layers: usize,
    pub n_neuron: usize,
    pub activation: Activation,
    pub input_width: usize,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_neuron == 0 || self.input_width == 0 {
            return Err(Error::Config(
                "network needs at least one hidden layer, neuron and input".into(),
            ));
        }
        Ok(())
    }
}

/// Weights are `n_out × n_in`; serialized row-major as `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerRepr", into = "LayerRepr")]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        Self {
            w: l.w.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: l.b.iter().copied().collect(),
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(r: LayerRepr) -> std::result::Result<Self, String> {
        let rows = r.w.len();
        let cols = r.w.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 || r.w.iter().any(|row| row.len() != cols) || r.b.len() != rows {
            return Err("layer weights are ragged or do not match the bias".into());
        }
        Ok(Layer {
            w: DMatrix::from_row_iterator(rows, cols, r.w.into_iter().flatten()),
            b: DVector::from_vec(r.b),
        })
    }
}

impl Layer {
    fn zeros_like(&self) -> Self {
        Layer {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
}

/// Same shapes as the network's layers.
pub type Gradients = Vec<Layer>;

struct Tape {
    // input of every layer
    acts: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
    probs: DMatrix<f64>,
}

impl Network {
    /// He-normal weights and zero biases.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![config.input_width];
        widths.extend(std::iter::repeat_n(config.n_neuron, config.n_layers));
        widths.push(N_CLASSES);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt())
                    .map_err(|e| Error::Config(e.to_string()))?;
                Ok(Layer {
                    w: DMatrix::from_fn(n_out, n_in, |_, _| normal.sample(&mut rng)),
                    b: DVector::zeros(n_out),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, layers })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Parameters in a fixed order: each layer's weights then its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Shape {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&theta[k..k + nw]);
            k += nw;
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&theta[k..k + nb]);
            k += nb;
        }
        Ok(())
    }

    fn batch(&self, x: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let width = self.config.input_width;
        for row in x {
            if row.len() != width {
                return Err(Error::Shape {
                    expected: width,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input("non-finite network input".into()));
            }
        }
        Ok(DMatrix::from_fn(width, x.len(), |i, j| x[j][i]))
    }

    fn run(&self, input: DMatrix<f64>) -> Tape {
        let act = self.config.activation;
        let last = self.layers.len() - 1;
        let mut acts = vec![input];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * &acts[k];
            for mut col in z.column_iter_mut() {
                col += &layer.b;
            }
            if k < last {
                acts.push(z.map(|v| act.apply(v)));
            }
            pre.push(z);
        }
        let probs = softmax_columns(&pre[last]);
        Tape { acts, pre, probs }
    }

    /// Summed cross-entropy over the batch and per-sample class probabilities.
    pub fn forward_loss(&self, x: &[Vec<f64>], y: &[usize]) -> Result<(f64, Vec<Probs>)> {
        check_labels(x.len(), y)?;
        let tape = self.run(self.batch(x)?);
        Ok((cross_entropy(&tape.probs, y), columns(&tape.probs)))
    }

    /// Loss and its exact gradient with respect to every weight and bias.
    pub fn backward(&self, x: &[Vec<f64>], y: &[usize]) -> Result<(f64, Gradients)> {
        check_labels(x.len(), y)?;
        let tape = self.run(self.batch(x)?);
        let loss = cross_entropy(&tape.probs, y);
        let act = self.config.activation;

        let mut delta = tape.probs.clone();
        for (j, &c) in y.iter().enumerate() {
            delta[(c, j)] -= 1.0;
        }
        let mut grads: Gradients = self.layers.iter().map(Layer::zeros_like).collect();
        for k in (0..self.layers.len()).rev() {
            grads[k].w = &delta * tape.acts[k].transpose();
            grads[k].b = delta.column_sum();
            if k > 0 {
                let upstream = self.layers[k].w.tr_mul(&delta);
                delta = upstream.zip_map(&tape.pre[k - 1], |g, z| g * act.derivative(z));
            }
        }
        Ok((loss, grads))
    }

    /// Largest relative gap between backprop and central differences of the
    /// loss, over all parameters. Relative errors use a 1e-3 magnitude floor.
    pub fn gradient_check(&self, x: &[Vec<f64>], y: &[usize], step: f64) -> Result<f64> {
        let (_, grads) = self.backward(x, y)?;
        let analytic: Vec<f64> = grads
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
            .collect();
        let theta = self.params();
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] += step;
            probe.set_params(&t)?;
            let fp = probe.forward_loss(x, y)?.0;
            t[k] -= 2.0 * step;
            probe.set_params(&t)?;
            let fm = probe.forward_loss(x, y)?.0;
            let fd = (fp - fm) / (2.0 * step);
            let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-3);
            worst = worst.max(err);
        }
        Ok(worst)
    }

    /// Pre-activations of the hidden layers for a batch, row per sample.
    pub fn hidden_preactivations(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let tape = self.run(self.batch(x)?);
        let hidden = tape.pre.len() - 1;
        Ok((0..x.len())
            .map(|j| tape.pre[..hidden].iter().flat_map(|z| z.column(j).iter().copied().collect::<Vec<_>>()).collect())
            .collect())
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Probs>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let tape = self.run(self.batch(x)?);
        Ok(columns(&tape.probs))
    }
}

fn check_labels(n: usize, y: &[usize]) -> Result<()> {
    if n != y.len() {
        return Err(Error::Shape {
            expected: n,
            got: y.len(),
        });
    }
    if y.iter().any(|&c| c >= N_CLASSES) {
        return Err(Error::Input("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Column-wise softmax with the max logit subtracted first.
pub fn softmax_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = z.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

fn cross_entropy(probs: &DMatrix<f64>, y: &[usize]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(j, &c)| -probs[(c, j)].max(PROB_FLOOR).ln())
        .sum()
}

fn columns(p: &DMatrix<f64>) -> Vec<Probs> {
    p.column_iter().map(|c| [c[0], c[1]]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(n_params: usize, p: &AdamParams) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: p.beta1,
            beta2: p.beta2,
            eps: ADAM_EPS,
            lr: p.lr,
        }
    }

    /// One bias-corrected Adam update of `theta` in place.
    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || g.len() != self.m.len() {
            return Err(Error::Shape {
                expected: self.m.len(),
                got: g.len().min(theta.len()),
            });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for k in 0..theta.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g[k] * g[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            theta[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let mut theta = net.params();
    let mut g = Vec::with_capacity(theta.len());
    for l in grads {
        g.extend_from_slice(l.w.as_slice());
        g.extend_from_slice(l.b.as_slice());
    }
    state.step(&mut theta, &g)?;
    net.set_params(&theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub drop_period: usize,
    pub drop_factor: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_epochs: 30,
            drop_period: 4,
            drop_factor: 0.5,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.drop_period == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch size, drop period and epoch count must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.drop_factor) {
            return Err(Error::Config("drop factor must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, base: f64, epoch: usize) -> f64 {
        base * self.drop_factor.powi((epoch / self.drop_period) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub initial_loss: f64,
}

/// Trains from a seeded initialization and returns the parameters with the
/// lowest validation loss (training loss when no validation rows are given).
pub fn train(
    x: &[Vec<f64>],
    y: &[usize],
    x_val: &[Vec<f64>],
    y_val: &[usize],
    config: MlpConfig,
    schedule: &TrainSchedule,
    adam: &AdamParams,
) -> Result<(Network, TrainHistory)> {
    let width = check_xy(x, y)?;
    if width != config.input_width {
        return Err(Error::Shape {
            expected: config.input_width,
            got: width,
        });
    }
    check_labels(x_val.len(), y_val)?;
    schedule.validate()?;
    if !(adam.lr > 0.0) || !(0.0..1.0).contains(&adam.beta1) || !(0.0..1.0).contains(&adam.beta2) {
        return Err(Error::Config("invalid Adam hyperparameters".into()));
    }

    let mut net = Network::init(config, schedule.seed)?;
    let mut state = AdamState::new(net.n_params(), adam);
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed ^ 0x5eed_5eed);
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainHistory {
        initial_loss: net.forward_loss(x, y)?.0 / n as f64,
        ..Default::default()
    };
    let mut best = (f64::INFINITY, net.clone());
    let mut since_best = 0;

    for epoch in 0..schedule.max_epochs {
        state.lr = schedule.learning_rate(adam.lr, epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| x[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = net.backward(&bx, &by)?;
            if !loss.is_finite() {
                return Err(Error::NumericalFailure {
                    context: "network training",
                    residual: loss,
                });
            }
            total += loss;
            adam_step(&mut net, &grads, &mut state)?;
        }
        let (val_loss, val_accuracy) = if x_val.is_empty() {
            (None, None)
        } else {
            let (loss, probs) = net.forward_loss(x_val, y_val)?;
            let correct = probs
                .iter()
                .zip(y_val)
                .filter(|(p, &c)| usize::from(p[1] > p[0]) == c)
                .count();
            (
                Some(loss / x_val.len() as f64),
                Some(correct as f64 / x_val.len() as f64),
            )
        };
        let train_loss = total / n as f64;
        history.epochs.push(EpochRecord {
            epoch,
            lr: state.lr,
            train_loss,
            val_loss,
            val_accuracy,
        });
        let watched = val_loss.unwrap_or(train_loss);
        if watched < best.0 {
            best = (watched, net.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= schedule.patience {
                break;
            }
        }
    }
    Ok((best.1, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn config(act: Activation, width: usize, layers: usize, neurons: usize) -> MlpConfig {
        MlpConfig {
            n_layers: layers,
            n_neuron: neurons,
            activation: act,
            input_width: width,
        }
    }

    fn random_batch(n: usize, width: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..n)
            .map(|_| (0..width).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let y = (0..n).map(|_| rng.random_range(0..2)).collect();
        (x, y)
    }

    #[test]
    fn init_is_seeded_with_zero_bias() {
        let c = config(Activation::Relu, 5, 2, 7);
        let a = Network::init(c, 3).unwrap();
        assert_eq!(a, Network::init(c, 3).unwrap());
        assert_ne!(a, Network::init(c, 4).unwrap());
        assert!(a.layers.iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
        assert_eq!(a.layers.len(), 3);
        assert_eq!(a.layers[2].w.shape(), (2, 7));
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let net = Network::init(config(Activation::Relu, 300, 2, 250), 1).unwrap();
        for l in &net.layers[..2] {
            let fan_in = l.w.ncols() as f64;
            let n = l.w.len() as f64;
            let mean = l.w.sum() / n;
            let var = l.w.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var / (2.0 / fan_in) - 1.0).abs() < 0.2, "{var}");
        }
    }

    #[test]
    fn uniform_output_costs_ln2_each() {
        let mut net = Network::init(config(Activation::Elu, 3, 1, 4), 0).unwrap();
        let zeros = vec![0.0; net.n_params()];
        net.set_params(&zeros).unwrap();
        let (x, y) = random_batch(9, 3, 2);
        let (loss, probs) = net.forward_loss(&x, &y).unwrap();
        assert!((loss - 9.0 * 2f64.ln()).abs() < 1e-12);
        assert!(probs.iter().all(|p| p == &[0.5, 0.5]));
    }

    #[test]
    fn rigged_network_has_zero_loss() {
        let mut net = Network::init(config(Activation::Relu, 2, 1, 2), 0).unwrap();
        net.set_params(&vec![0.0; net.n_params()]).unwrap();
        net.layers[1].b[1] = 1e3;
        let (x, _) = random_batch(4, 2, 1);
        let (loss, probs) = net.forward_loss(&x, &[1; 4]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(probs.iter().all(|p| p[1] == 1.0));
    }

    #[test]
    fn zero_network_bias_gradient_is_p_minus_l() {
        let mut net = Network::init(config(Activation::LeakyRelu, 4, 2, 3), 0).unwrap();
        net.set_params(&vec![0.0; net.n_params()]).unwrap();
        let x = vec![vec![0.0; 4]; 5];
        let y = vec![1, 0, 1, 1, 0];
        let (_, g) = net.backward(&x, &y).unwrap();
        // p = 0.5 everywhere: Σ(p − l) = 2.5 − 2 for class 0 and 2.5 − 3 for class 1
        assert_eq!(g[2].b.as_slice(), &[0.5, -0.5]);
    }

    #[test]
    fn duplicated_batch_doubles_gradient() {
        let net = Network::init(config(Activation::Elu, 3, 2, 5), 7).unwrap();
        let (x, y) = random_batch(6, 3, 8);
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<usize> = y.iter().chain(&y).copied().collect();
        let (_, g1) = net.backward(&x, &y).unwrap();
        let (_, g2) = net.backward(&x2, &y2).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            for (u, v) in a.w.iter().zip(b.w.iter()) {
                assert!((2.0 * u - v).abs() <= 1e-14 * (1.0 + v.abs()));
            }
            for (u, v) in a.b.iter().zip(b.b.iter()) {
                assert!((2.0 * u - v).abs() <= 1e-14 * (1.0 + v.abs()));
            }
        }
    }

    /// Relative FD error of the gradient on a 2-layer, 8-neuron network.
    fn max_gradient_error(act: Activation, seed: u64) -> f64 {
        let mut net = Network::init(config(act, 4, 2, 8), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let theta: Vec<f64> = net.params().iter().map(|w| w + rng.random_range(-0.1..0.1)).collect();
        net.set_params(&theta).unwrap();
        let (mut x, y) = random_batch(6, 4, seed + 200);
        // nudge inputs until no hidden pre-activation sits near the kink
        for _ in 0..50 {
            let pre = net.hidden_preactivations(&x).unwrap();
            if pre.iter().flatten().all(|v| v.abs() >= 1e-3) {
                break;
            }
            for row in &mut x {
                for v in row.iter_mut() {
                    *v += 1e-3 * rng.random_range(-1.0..1.0);
                }
            }
        }
        net.gradient_check(&x, &y, 1e-5).unwrap()
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for act in Activation::ALL {
            for seed in 0..3 {
                let e = max_gradient_error(act, seed);
                assert!(e < 1e-5, "{act:?} seed {seed}: {e:e}");
            }
        }
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut s = AdamState::new(3, &AdamParams { lr: 0.05, beta1: 0.9, beta2: 0.999 });
        let mut theta = [1.0, -2.0, 0.5];
        let g = [0.3, -7.0, 0.0];
        s.step(&mut theta, &g).unwrap();
        assert!((theta[0] - (1.0 - 0.05 * 0.3 / (0.3 + ADAM_EPS))).abs() < 1e-15);
        assert!((theta[1] - (-2.0 + 0.05)).abs() < 1e-9);
        assert_eq!(theta[2], 0.5);
    }

    #[test]
    fn adam_three_step_trace() {
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.1f64, 1e-8f64);
        let mut s = AdamState::new(1, &AdamParams { lr, beta1: b1, beta2: b2 });
        let mut theta = [0.0];
        // hand-unrolled recurrence for a constant gradient of 1
        let m = [0.1, 0.19, 0.271];
        let v = [0.001, 0.001999, 0.002997001];
        let mut want = 0.0;
        for t in 0..3 {
            s.step(&mut theta, &[1.0]).unwrap();
            let m_hat = m[t] / (1.0 - b1.powi(t as i32 + 1));
            let v_hat = v[t] / (1.0 - b2.powi(t as i32 + 1));
            want -= lr * m_hat / (v_hat.sqrt() + eps);
            assert!((theta[0] - want).abs() < 1e-12, "step {t}");
            assert!((s.m[0] - m[t]).abs() < 1e-15);
            assert!((s.v[0] - v[t]).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut s = AdamState::new(2, &AdamParams::default());
        let mut theta = [0.4, -1.1];
        s.step(&mut theta, &[0.0, 0.0]).unwrap();
        assert_eq!(theta, [0.4, -1.1]);
    }

    fn toy_separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        while x.len() < n {
            let p: Vec<f64> = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let s = p[0] - 0.5 * p[1];
            if s.abs() > 0.1 {
                y.push(usize::from(s > 0.0));
                x.push(p);
            }
        }
        (x, y)
    }

    #[test]
    fn learns_separable_toy_set() {
        let (x, y) = toy_separable(200, 4);
        let sched = TrainSchedule {
            batch_size: 16,
            max_epochs: 50,
            drop_period: 50,
            drop_factor: 1.0,
            patience: 50,
            seed: 1,
        };
        let adam = AdamParams { lr: 0.01, ..Default::default() };
        let (net, hist) = train(&x, &y, &[], &[], config(Activation::Relu, 2, 2, 16), &sched, &adam).unwrap();
        let p = net.predict_proba(&x).unwrap();
        let acc = p.iter().zip(&y).filter(|(p, &c)| usize::from(p[1] > 0.5) == c).count() as f64 / 200.0;
        assert!(acc >= 0.99, "{acc}");
        assert!(hist.epochs[0].train_loss < hist.initial_loss);
        assert!(hist.epochs.iter().all(|e| e.lr == 0.01));
        let (net2, hist2) = train(&x, &y, &[], &[], config(Activation::Relu, 2, 2, 16), &sched, &adam).unwrap();
        assert_eq!(hist, hist2);
        assert_eq!(net, net2);
    }

    #[test]
    fn lr_drops_and_early_stop() {
        let (x, y) = toy_separable(120, 5);
        let (xv, yv) = toy_separable(40, 6);
        let sched = TrainSchedule {
            batch_size: 32,
            max_epochs: 12,
            drop_period: 3,
            drop_factor: 0.5,
            patience: 2,
            seed: 2,
        };
        let adam = AdamParams { lr: 0.02, ..Default::default() };
        let (net, hist) = train(&x, &y, &xv, &yv, config(Activation::Elu, 2, 1, 8), &sched, &adam).unwrap();
        for e in &hist.epochs {
            assert_eq!(e.lr, 0.02 * 0.5f64.powi((e.epoch / 3) as i32));
            assert!(e.val_loss.is_some());
        }
        let best = hist.epochs[hist.best_epoch].val_loss.unwrap();
        assert!(hist.epochs.iter().all(|e| e.val_loss.unwrap() >= best));
        let (l, _) = net.forward_loss(&xv, &yv).unwrap();
        assert!((l / 40.0 - best).abs() < 1e-12);
        assert!(matches!(
            train(&[], &[], &xv, &yv, config(Activation::Elu, 2, 1, 8), &sched, &adam),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn model_json_roundtrip() {
        let net = Network::init(config(Activation::LeakyRelu, 3, 2, 4), 9).unwrap();
        let s = serde_json::to_string(&net).unwrap();
        assert!(s.contains("\"W\""));
        let back: Network = serde_json::from_str(&s).unwrap();
        assert_eq!(back, net);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["layers"][0]["W"][1][2].as_f64().unwrap(), net.layers[0].w[(1, 2)]);
    }

    #[test]
    fn non_finite_input_rejected() {
        let net = Network::init(config(Activation::Relu, 2, 1, 2), 0).unwrap();
        assert!(matches!(
            net.forward_loss(&[vec![f64::NAN, 0.0]], &[0]),
            Err(Error::Input(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_is_shift_invariant(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -100.0f64..100.0) {
            let z = DMatrix::from_column_slice(2, 1, &[a, b]);
            let zs = DMatrix::from_column_slice(2, 1, &[a + c, b + c]);
            let p = softmax_columns(&z);
            let q = softmax_columns(&zs);
            prop_assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }

        #[test]
        fn predictions_match_forward(seed in 0u64..500) {
            let net = Network::init(config(Activation::Elu, 3, 2, 6), seed).unwrap();
            let (x, y) = random_batch(7, 3, seed);
            let (_, p) = net.forward_loss(&x, &y).unwrap();
            let q = net.predict_proba(&x).unwrap();
            prop_assert_eq!(&p, &q);
            for r in q {
                prop_assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
            }
        }
    }
}
