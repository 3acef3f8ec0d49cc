//! Bayesian optimization over a mixed continuous/integer/categorical space
//! with a Matérn-5/2 Gaussian-process surrogate and expected improvement.
//!
//! Every configuration is mapped to the unit cube: continuous and integer
//! dimensions min-max scaled (optionally in log space), categorical
//! dimensions one-hot.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal as NormalDist};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::dnn::{Activation, AdamParams, MlpConfig, TrainSchedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Dimension {
    Continuous {
        name: String,
        lo: f64,
        hi: f64,
        #[serde(default)]
        log: bool,
    },
    Integer {
        name: String,
        lo: i64,
        hi: i64,
    },
    Categorical {
        name: String,
        choices: Vec<String>,
    },
}

impl Dimension {
    pub fn name(&self) -> &str {
        match self {
            Dimension::Continuous { name, .. }
            | Dimension::Integer { name, .. }
            | Dimension::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            Dimension::Categorical { choices, .. } => choices.len(),
            _ => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Dimension::Continuous { lo, hi, log, .. } => {
                lo.is_finite() && hi.is_finite() && lo < hi && (!log || *lo > 0.0)
            }
            Dimension::Integer { lo, hi, .. } => lo < hi,
            Dimension::Categorical { choices, .. } => !choices.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dimension {}", self.name())))
        }
    }

    /// Maps a unit coordinate to a value of this dimension (categorical
    /// dimensions split [0, 1) into equal bins).
    fn from_unit(&self, u: f64) -> Value {
        let u = u.clamp(0.0, 1.0);
        match self {
            Dimension::Continuous { lo, hi, log, .. } => Value::Real(if u == 0.0 {
                *lo
            } else if u == 1.0 {
                *hi
            } else if *log {
                (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(*lo, *hi)
            } else {
                lo + u * (hi - lo)
            }),
            Dimension::Integer { lo, hi, .. } => {
                Value::Int(lo + (u * (hi - lo) as f64).round() as i64)
            }
            Dimension::Categorical { choices, .. } => {
                let k = ((u * choices.len() as f64) as usize).min(choices.len() - 1);
                Value::Cat(choices[k].clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(x) => Some(*x),
            Value::Cat(_) => None,
        }
    }
}

/// One value per dimension, in dimension order.
pub type Config = Vec<Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        for d in &dims {
            d.validate()?;
        }
        Ok(Self { dims })
    }

    pub fn encoded_len(&self) -> usize {
        self.dims.iter().map(Dimension::width).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name() == name)
    }

    pub fn get<'a>(&self, config: &'a Config, name: &str) -> Option<&'a Value> {
        self.index_of(name).and_then(|i| config.get(i))
    }

    pub fn encode(&self, config: &Config) -> Result<Vec<f64>> {
        if config.len() != self.dims.len() {
            return Err(Error::Shape {
                expected: self.dims.len(),
                got: config.len(),
            });
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        for (d, v) in self.dims.iter().zip(config) {
            let bad = || Error::Input(format!("value {v:?} does not fit dimension {}", d.name()));
            match (d, v) {
                (Dimension::Continuous { lo, hi, log, .. }, _) => {
                    let x = v.as_f64().ok_or_else(bad)?;
                    out.push(if *log {
                        (x.ln() - lo.ln()) / (hi.ln() - lo.ln())
                    } else {
                        (x - lo) / (hi - lo)
                    });
                }
                (Dimension::Integer { lo, hi, .. }, Value::Int(i)) => {
                    out.push((i - lo) as f64 / (hi - lo) as f64);
                }
                (Dimension::Categorical { choices, .. }, Value::Cat(c)) => {
                    let k = choices.iter().position(|s| s == c).ok_or_else(bad)?;
                    out.extend((0..choices.len()).map(|j| if j == k { 1.0 } else { 0.0 }));
                }
                _ => return Err(bad()),
            }
        }
        Ok(out)
    }

    /// Inverse of `encode`; coordinates are clamped to [0, 1], integers
    /// rounded and categorical blocks resolved by their largest entry.
    pub fn decode(&self, u: &[f64]) -> Result<Config> {
        if u.len() != self.encoded_len() {
            return Err(Error::Shape {
                expected: self.encoded_len(),
                got: u.len(),
            });
        }
        let mut k = 0;
        let mut out = Vec::with_capacity(self.dims.len());
        for d in &self.dims {
            match d {
                Dimension::Categorical { choices, .. } => {
                    let block = &u[k..k + choices.len()];
                    let best = (0..block.len())
                        .fold(0, |b, j| if block[j] > block[b] { j } else { b });
                    out.push(Value::Cat(choices[best].clone()));
                }
                _ => out.push(d.from_unit(u[k])),
            }
            k += d.width();
        }
        Ok(out)
    }

    /// Uniform random configuration.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Config {
        self.dims.iter().map(|d| d.from_unit(rng.random())).collect()
    }

    /// Randomly shifted Halton point `index`, one coordinate per dimension.
    pub fn halton(&self, index: usize, shift: &[f64]) -> Config {
        self.dims
            .iter()
            .enumerate()
            .map(|(j, d)| d.from_unit((radical_inverse(index + 1, PRIMES[j % PRIMES.len()]) + shift[j]).fract()))
            .collect()
    }
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// The DNN search space: depth, width, activation, Adam moments, batch
/// size, learning rate and its drop schedule.
pub fn dnn_space() -> SearchSpace {
    dnn_space_with(5, 10, 200, 500, 200, 800)
}

/// The DNN search space with custom depth, width and batch-size ranges.
pub fn dnn_space_with(
    layers_lo: i64,
    layers_hi: i64,
    neurons_lo: i64,
    neurons_hi: i64,
    batch_lo: i64,
    batch_hi: i64,
) -> SearchSpace {
    let int = |name: &str, lo, hi| Dimension::Integer {
        name: name.into(),
        lo,
        hi,
    };
    let cont = |name: &str, lo, hi, log| Dimension::Continuous {
        name: name.into(),
        lo,
        hi,
        log,
    };
    SearchSpace {
        dims: vec![
            int("n_layers", layers_lo, layers_hi),
            int("n_neuron", neurons_lo, neurons_hi),
            Dimension::Categorical {
                name: "activation".into(),
                choices: vec!["relu".into(), "leaky_relu".into(), "elu".into()],
            },
            cont("beta1", 0.85, 0.95, false),
            cont("beta2", 0.9, 0.999, false),
            int("batch_size", batch_lo, batch_hi),
            cont("lr", 0.001, 0.01, true),
            int("drop_period", 2, 8),
            cont("drop_factor", 0.0, 0.8, false),
        ],
    }
}

/// Network and optimizer settings read from a configuration of a DNN space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DnnHyper {
    pub n_layers: usize,
    pub n_neuron: usize,
    pub activation: Activation,
    pub adam: AdamParams,
    pub batch_size: usize,
    pub drop_period: usize,
    pub drop_factor: f64,
}

/// A small network that trains in seconds on a few thousand rows.
impl Default for DnnHyper {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_neuron: 64,
            activation: Activation::Relu,
            adam: AdamParams {
                lr: 3e-3,
                beta1: 0.9,
                beta2: 0.999,
            },
            batch_size: 64,
            drop_period: 8,
            drop_factor: 0.5,
        }
    }
}

impl DnnHyper {
    pub fn from_config(space: &SearchSpace, config: &Config) -> Result<Self> {
        let num = |name: &str| {
            space
                .get(config, name)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Config(format!("configuration lacks {name}")))
        };
        let activation = match space.get(config, "activation") {
            Some(Value::Cat(s)) => serde_json::from_value(serde_json::Value::String(s.clone()))
                .map_err(|_| Error::Config(format!("unknown activation {s}")))?,
            _ => return Err(Error::Config("configuration lacks activation".into())),
        };
        Ok(Self {
            n_layers: num("n_layers")? as usize,
            n_neuron: num("n_neuron")? as usize,
            activation,
            adam: AdamParams {
                lr: num("lr")?,
                beta1: num("beta1")?,
                beta2: num("beta2")?,
            },
            batch_size: num("batch_size")? as usize,
            drop_period: num("drop_period")? as usize,
            drop_factor: num("drop_factor")?,
        })
    }

    pub fn mlp(&self, input_width: usize) -> MlpConfig {
        MlpConfig {
            n_layers: self.n_layers,
            n_neuron: self.n_neuron,
            activation: self.activation,
            input_width,
        }
    }

    pub fn schedule(&self, max_epochs: usize, patience: usize, seed: u64) -> TrainSchedule {
        TrainSchedule {
            batch_size: self.batch_size,
            max_epochs,
            drop_period: self.drop_period,
            drop_factor: self.drop_factor,
            patience,
            seed,
        }
    }
}

const SQRT5: f64 = 2.236_067_977_499_79;
const LOG_LENGTH_BOUNDS: (f64, f64) = (-4.6, 2.3);
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-4.6, 2.3);
const LOG_NOISE_BOUNDS: (f64, f64) = (-13.8, 0.0);
const FIT_STARTS: usize = 4;
const JITTER: f64 = 1e-10;

fn matern52(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Zero-mean GP on standardized targets.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    /// Per-coordinate length scales (fixed at 1 for one-hot coordinates).
    pub length: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    y_mean: f64,
    y_std: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn kernel(a: &[f64], b: &[f64], length: &[f64], signal_var: f64) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(length)
        .map(|((u, v), l)| ((u - v) / l).powi(2))
        .sum();
    signal_var * matern52(r2.sqrt())
}

struct Hyper<'a> {
    free: &'a [usize],
    dim: usize,
}

impl Hyper<'_> {
    fn unpack(&self, theta: &[f64]) -> (Vec<f64>, f64, f64) {
        let mut length = vec![1.0; self.dim];
        for (k, &j) in self.free.iter().enumerate() {
            length[j] = theta[k].exp();
        }
        let n = self.free.len();
        (length, theta[n].exp(), theta[n + 1].exp())
    }

    fn bounds(&self, k: usize) -> (f64, f64) {
        let n = self.free.len();
        if k < n {
            LOG_LENGTH_BOUNDS
        } else if k == n {
            LOG_SIGNAL_BOUNDS
        } else {
            LOG_NOISE_BOUNDS
        }
    }
}

fn factor(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    length: &[f64],
    signal_var: f64,
    noise_var: f64,
) -> Option<(Cholesky<f64, Dyn>, DVector<f64>, f64)> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        kernel(&x[i], &x[j], length, signal_var) + if i == j { noise_var + JITTER } else { 0.0 }
    });
    let chol = Cholesky::new(k)?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Some((chol, alpha, lml))
}

impl GaussianProcess {
    /// Fits kernel hyperparameters by maximizing the marginal likelihood from
    /// several starts with a bounded compass search. `fixed_unit` marks
    /// coordinates whose length scale stays at 1.
    pub fn fit(x: &[Vec<f64>], y: &[f64], fixed_unit: &[bool], seed: u64) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::Input("GP needs at least two observations".into()));
        }
        let dim = x[0].len();
        let free: Vec<usize> = (0..dim).filter(|&j| !fixed_unit.get(j).copied().unwrap_or(false)).collect();
        let hyper = Hyper { free: &free, dim };
        let n_theta = free.len() + 2;

        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / y.len() as f64;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));

        let objective = |theta: &[f64]| {
            let (l, s, n) = hyper.unpack(theta);
            factor(x, &ys, &l, s, n).map_or(f64::NEG_INFINITY, |f| f.2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for start in 0..FIT_STARTS {
            let mut theta: Vec<f64> = (0..n_theta)
                .map(|k| {
                    let (lo, hi) = hyper.bounds(k);
                    if start == 0 {
                        // neutral start: moderate length scales, unit signal, small noise
                        let neutral = match k.cmp(&free.len()) {
                            std::cmp::Ordering::Less => -1.0,
                            std::cmp::Ordering::Equal => 0.0,
                            std::cmp::Ordering::Greater => -6.0,
                        };
                        f64::clamp(neutral, lo, hi)
                    } else {
                        rng.random_range(lo..hi)
                    }
                })
                .collect();
            let mut value = objective(&theta);
            let mut step = 1.0;
            while step > 1e-3 {
                let mut improved = false;
                for k in 0..n_theta {
                    let (lo, hi) = hyper.bounds(k);
                    for dir in [1.0, -1.0] {
                        let mut t = theta.clone();
                        t[k] = (t[k] + dir * step).clamp(lo, hi);
                        let v = objective(&t);
                        if v > value + 1e-12 {
                            theta = t;
                            value = v;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    step /= 2.0;
                }
            }
            if best.as_ref().is_none_or(|b| value > b.0) {
                best = Some((value, theta));
            }
        }
        let (value, theta) = best.expect("at least one start");
        if !value.is_finite() {
            return Err(Error::NumericalFailure {
                context: "GP hyperparameter fit",
                residual: value,
            });
        }
        let (length, signal_var, noise_var) = hyper.unpack(&theta);
        Self::with_hyper(x, y, length, signal_var, noise_var)
    }

    /// Conditions a GP with given hyperparameters on new data.
    pub fn with_hyper(
        x: &[Vec<f64>],
        y: &[f64],
        length: Vec<f64>,
        signal_var: f64,
        noise_var: f64,
    ) -> Result<Self> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(Error::Input("GP needs at least two observations".into()));
        }
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / y.len() as f64;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));
        let (chol, alpha, _) = factor(x, &ys, &length, signal_var, noise_var).ok_or(
            Error::NumericalFailure {
                context: "GP covariance factorization",
                residual: noise_var,
            },
        )?;
        Ok(Self {
            x: x.to_vec(),
            length,
            signal_var,
            noise_var,
            y_mean,
            y_std,
            chol,
            alpha,
        })
    }

    /// Posterior mean and variance of the latent function, in target units.
    pub fn posterior(&self, u: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| kernel(xi, u, &self.length, self.signal_var)),
        );
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (self.signal_var - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, var * self.y_std * self.y_std)
    }

    /// Observation noise standard deviation, in target units.
    pub fn noise_std(&self) -> f64 {
        self.noise_var.sqrt() * self.y_std
    }
}

/// Closed-form expected improvement over `best` for maximization.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let sigma = var.max(0.0).sqrt();
    let gap = mean - best;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    let n = Normal::standard();
    (gap * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: serde_json::Map<String, serde_json::Value>,
    /// For failed trials, the worst observed value at the time of failure.
    pub objective: f64,
    pub wall_time_s: f64,
    pub status: TrialStatus,
    #[serde(skip)]
    pub point: Config,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoOptions {
    pub budget: usize,
    pub init: usize,
    pub batch: usize,
    pub seed: u64,
    pub n_candidates: usize,
    pub n_refine: usize,
}

impl Default for BoOptions {
    fn default() -> Self {
        Self {
            budget: 30,
            init: 8,
            batch: 1,
            seed: 0,
            n_candidates: 2000,
            n_refine: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoResult {
    pub best: Trial,
    pub history: Vec<Trial>,
}

impl BoResult {
    /// Best completed objective after each trial.
    pub fn best_trace(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.history
            .iter()
            .map(|t| {
                if t.status == TrialStatus::Completed {
                    best = best.max(t.objective);
                }
                best
            })
            .collect()
    }
}

fn named(space: &SearchSpace, config: &Config) -> serde_json::Map<String, serde_json::Value> {
    space
        .dims
        .iter()
        .zip(config)
        .map(|(d, v)| (d.name().to_string(), serde_json::to_value(v).unwrap_or_default()))
        .collect()
}

fn evaluate_batch<F>(space: &SearchSpace, objective: &F, configs: Vec<Config>, history: &mut Vec<Trial>)
where
    F: Fn(&Config) -> Result<f64> + Sync,
{
    let results: Vec<(Result<f64>, f64)> = configs
        .par_iter()
        .map(|c| {
            let t0 = Instant::now();
            let r = objective(c).and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NumericalFailure {
                        context: "objective",
                        residual: v,
                    })
                }
            });
            (r, t0.elapsed().as_secs_f64())
        })
        .collect();
    for (config, (r, secs)) in configs.into_iter().zip(results) {
        let worst = history
            .iter()
            .filter(|t| t.status == TrialStatus::Completed)
            .map(|t| t.objective)
            .fold(f64::INFINITY, f64::min);
        let (objective, status) = match r {
            Ok(v) => (v, TrialStatus::Completed),
            Err(_) => (if worst.is_finite() { worst } else { 0.0 }, TrialStatus::Failed),
        };
        history.push(Trial {
            index: history.len(),
            config: named(space, &config),
            objective,
            wall_time_s: secs,
            status,
            point: config,
        });
    }
}

fn best_trial(history: &[Trial]) -> Result<Trial> {
    history
        .iter()
        .filter(|t| t.status == TrialStatus::Completed)
        .fold(None::<&Trial>, |b, t| match b {
            Some(b) if b.objective >= t.objective => Some(b),
            _ => Some(t),
        })
        .cloned()
        .ok_or_else(|| Error::Experiment("every trial failed".into()))
}

/// Local refinement: Gaussian moves of the numeric coordinates, re-snapped
/// through decode so proposals stay valid configurations.
fn refine(
    space: &SearchSpace,
    gp: &GaussianProcess,
    best: f64,
    start: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Vec<f64>)> {
    let (m, v) = gp.posterior(&start);
    let mut current = (expected_improvement(m, v, best), start);
    let mut sigma = 0.1;
    for _ in 0..4 {
        for _ in 0..15 {
            let noise = NormalDist::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
            let mut u = current.1.clone();
            let mut k = 0;
            for d in &space.dims {
                if !matches!(d, Dimension::Categorical { .. }) {
                    u[k] = (u[k] + noise.sample(rng)).clamp(0.0, 1.0);
                }
                k += d.width();
            }
            let u = space.encode(&space.decode(&u)?)?;
            let (m, v) = gp.posterior(&u);
            let ei = expected_improvement(m, v, best);
            if ei > current.0 {
                current = (ei, u);
            }
        }
        sigma /= 3.0;
    }
    Ok(current)
}

fn propose(
    space: &SearchSpace,
    gp: &GaussianProcess,
    best: f64,
    opts: &BoOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Config> {
    let mut scored: Vec<(f64, Vec<f64>)> = (0..opts.n_candidates.max(1))
        .map(|_| {
            let u = space.encode(&space.sample(rng))?;
            let (m, v) = gp.posterior(&u);
            Ok((expected_improvement(m, v, best), u))
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(opts.n_refine.max(1));
    let mut winner: Option<(f64, Vec<f64>)> = None;
    for (_, u) in scored {
        let r = refine(space, gp, best, u, rng)?;
        if winner.as_ref().is_none_or(|w| r.0 > w.0) {
            winner = Some(r);
        }
    }
    space.decode(&winner.expect("at least one candidate").1)
}

/// Maximizes `objective` over `space`. Failed evaluations are kept in the
/// history with the worst observed value imputed.
pub fn bo_run<F>(objective: F, space: &SearchSpace, opts: &BoOptions) -> Result<BoResult>
where
    F: Fn(&Config) -> Result<f64> + Sync,
{
    if opts.budget == 0 || opts.batch == 0 {
        return Err(Error::Config("budget and batch must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shift: Vec<f64> = (0..space.dims.len()).map(|_| rng.random()).collect();
    let fixed_unit: Vec<bool> = space
        .dims
        .iter()
        .flat_map(|d| std::iter::repeat_n(matches!(d, Dimension::Categorical { .. }), d.width()))
        .collect();
    let mut history = Vec::with_capacity(opts.budget);

    let n_init = opts.init.min(opts.budget);
    for chunk_start in (0..n_init).step_by(opts.batch) {
        let configs = (chunk_start..(chunk_start + opts.batch).min(n_init))
            .map(|i| space.halton(i, &shift))
            .collect();
        evaluate_batch(space, &objective, configs, &mut history);
    }

    while history.len() < opts.budget {
        let n_next = opts.batch.min(opts.budget - history.len());
        let mut x: Vec<Vec<f64>> = history
            .iter()
            .map(|t| space.encode(&t.point))
            .collect::<Result<_>>()?;
        let mut y: Vec<f64> = history.iter().map(|t| t.objective).collect();
        let best = best_trial(&history).map(|t| t.objective).unwrap_or(f64::NEG_INFINITY);
        let fit_seed = rng.random();
        let gp = if x.len() >= 2 {
            GaussianProcess::fit(&x, &y, &fixed_unit, fit_seed).ok()
        } else {
            None
        };
        let mut configs = Vec::with_capacity(n_next);
        match gp {
            None => configs.extend((0..n_next).map(|_| space.sample(&mut rng))),
            Some(mut gp) => {
                for b in 0..n_next {
                    let c = propose(space, &gp, best, opts, &mut rng)?;
                    if b + 1 < n_next {
                        // constant liar: pretend the pending point scored the current best
                        x.push(space.encode(&c)?);
                        y.push(best);
                        gp = GaussianProcess::with_hyper(&x, &y, gp.length.clone(), gp.signal_var, gp.noise_var)?;
                    }
                    configs.push(c);
                }
            }
        }
        evaluate_batch(space, &objective, configs, &mut history);
    }
    Ok(BoResult {
        best: best_trial(&history)?,
        history,
    })
}

/// Independent uniform sampling with the same bookkeeping as `bo_run`.
pub fn random_search<F>(objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<BoResult>
where
    F: Fn(&Config) -> Result<f64> + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(budget);
    let configs = (0..budget).map(|_| space.sample(&mut rng)).collect();
    evaluate_batch(space, &objective, configs, &mut history);
    Ok(BoResult {
        best: best_trial(&history)?,
        history,
    })
}

pub fn write_trials(history: &[Trial], path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), history)?;
    Ok(())
}
