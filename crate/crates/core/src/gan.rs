//! Fully-connected GAN over learner-attempt probability vectors.
//!
//! Both networks use rectifier hidden layers. The generator ends in a
//! logistic squash so every coordinate lies in (0, 1); the discriminator
//! emits a logit and D(x) = σ(logit). Gradients are exact backpropagation.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::{Provenance, SimulationBatch};
use crate::error::{Error, Result};
use crate::seed;

/// Real vectors are clamped into `[REAL_CLAMP, 1 - REAL_CLAMP]`.
pub const REAL_CLAMP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    #[default]
    Sgd,
    /// Adaptive moments, for clusters where plain SGD stalls.
    Adam { beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub output_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub disc_steps_per_gen: usize,
    pub optimizer: Optimizer,
    /// Steps between trace records.
    pub log_every: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            noise_dim: 2,
            gen_hidden: vec![64, 64],
            disc_hidden: vec![64, 64],
            output_dim: 1,
            learning_rate: 0.1,
            batch_size: 32,
            steps: 5000,
            disc_steps_per_gen: 1,
            optimizer: Optimizer::Sgd,
            log_every: 100,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.noise_dim == 0 || self.output_dim == 0 {
            return bad("noise_dim and output_dim must be positive");
        }
        if self.gen_hidden.contains(&0) || self.disc_hidden.contains(&0) {
            return bad("hidden layers must have positive width");
        }
        if self.batch_size == 0 || self.steps == 0 || self.disc_steps_per_gen == 0 || self.log_every == 0 {
            return bad("batch_size, steps, disc_steps_per_gen and log_every must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `[out, in]`
    pub shape: [usize; 2],
    /// Row-major `out × in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn new(inp: usize, out: usize, rng: &mut seed::Rng) -> Self {
        let limit = (6.0 / inp as f64).sqrt();
        Self {
            shape: [out, inp],
            weights: (0..out * inp).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; out],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let [out, inp] = self.shape;
        (0..out)
            .map(|o| {
                let row = &self.weights[o * inp..(o + 1) * inp];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

/// Rectifier MLP with a configurable output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: OutputActivation,
}

/// Pre-activations of every layer for one input.
struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Mlp {
    fn new(widths: &[usize], output: OutputActivation, rng: &mut seed::Rng) -> Self {
        let layers = widths.windows(2).map(|w| Dense::new(w[0], w[1], rng)).collect();
        Self { layers, output }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("mlp has layers").shape[0]
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            h = if i + 1 == self.layers.len() {
                match self.output {
                    OutputActivation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
                    OutputActivation::Identity => z.clone(),
                }
            } else {
                relu(&z)
            };
            pre.push(z);
        }
        Trace {
            input: x.to_vec(),
            pre,
            out: h,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).out
    }

    /// Accumulates parameter gradients into `grads` (flat, [`params`](Self::params)
    /// order) given dLoss/dOutput, and returns dLoss/dInput.
    fn backward(&self, t: &Trace, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Sigmoid => grad_out.iter().zip(&t.out).map(|(g, y)| g * y * (1.0 - y)).collect(),
            OutputActivation::Identity => grad_out.to_vec(),
        };
        let offsets = self.offsets();
        for i in (0..=last).rev() {
            let layer = &self.layers[i];
            let [out, inp] = layer.shape;
            let input: Vec<f64> = if i == 0 { t.input.clone() } else { relu(&t.pre[i - 1]) };
            let off = offsets[i];
            for o in 0..out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grads[off + o * inp..off + (o + 1) * inp];
                row.iter_mut().zip(&input).for_each(|(g, x)| *g += d * x);
                grads[off + out * inp + o] += d;
            }
            let mut back = vec![0.0; inp];
            for o in 0..out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * inp..(o + 1) * inp];
                back.iter_mut().zip(row).for_each(|(b, w)| *b += d * w);
            }
            if i > 0 {
                back.iter_mut().zip(&t.pre[i - 1]).for_each(|(b, z)| {
                    if *z <= 0.0 {
                        *b = 0.0;
                    }
                });
            }
            delta = back;
        }
        delta
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.param_count();
                o
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// All parameters, layer by layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut it = p.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|w| *w = it.next().unwrap());
        }
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|w| w.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub config: GanConfig,
    pub trained_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

pub type TrainTrace = Vec<TraceRecord>;

pub fn write_trace_csv<W: std::io::Write>(mut w: W, trace: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "step,disc_loss,gen_loss,mean_d_real,mean_d_fake")?;
    for r in trace {
        writeln!(w, "{},{},{},{},{}", r.step, r.disc_loss, r.gen_loss, r.mean_d_real, r.mean_d_fake)?;
    }
    Ok(())
}

/// Builds untrained networks from `cfg`, weights drawn uniformly in
/// `±sqrt(6 / fan_in)`, biases zero.
pub fn build_gan(cfg: &GanConfig) -> Result<GanModel> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, "gan-init", &[]));
    let gen_widths: Vec<usize> = std::iter::once(cfg.noise_dim)
        .chain(cfg.gen_hidden.iter().copied())
        .chain(std::iter::once(cfg.output_dim))
        .collect();
    let disc_widths: Vec<usize> = std::iter::once(cfg.output_dim)
        .chain(cfg.disc_hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    Ok(GanModel {
        generator: Mlp::new(&gen_widths, OutputActivation::Sigmoid, &mut rng),
        discriminator: Mlp::new(&disc_widths, OutputActivation::Identity, &mut rng),
        config: cfg.clone(),
        trained_steps: 0,
    })
}

/// Loss, flat gradient, and the mean D outputs involved.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

impl GanModel {
    /// `D(x)` for one vector.
    pub fn discriminate(&self, x: &[f64]) -> f64 {
        sigmoid(self.discriminator.forward(x)[0])
    }

    pub fn generate_one(&self, z: &[f64]) -> Vec<f64> {
        self.generator.forward(z)
    }

    /// Discriminator loss `−mean ln D(x) − mean ln(1 − D(G(z)))` and its
    /// gradient w.r.t. the discriminator parameters.
    pub fn discriminator_loss(&self, real: &[Vec<f64>], noise: &[Vec<f64>]) -> LossGrad {
        let d = &self.discriminator;
        let mut grad = vec![0.0; d.param_count()];
        let (mut loss, mut sum_real, mut sum_fake) = (0.0, 0.0, 0.0);
        let nr = real.len() as f64;
        for x in real {
            let t = d.trace(x);
            let s = t.out[0];
            loss += softplus(-s) / nr;
            let p = sigmoid(s);
            sum_real += p;
            d.backward(&t, &[(p - 1.0) / nr], &mut grad);
        }
        let nf = noise.len() as f64;
        for z in noise {
            let fake = self.generator.forward(z);
            let t = d.trace(&fake);
            let s = t.out[0];
            loss += softplus(s) / nf;
            let p = sigmoid(s);
            sum_fake += p;
            d.backward(&t, &[p / nf], &mut grad);
        }
        LossGrad {
            loss,
            grad,
            mean_d_real: sum_real / nr,
            mean_d_fake: sum_fake / nf,
        }
    }

    /// Non-saturating generator loss `−mean ln D(G(z))` and its gradient
    /// w.r.t. the generator parameters.
    pub fn generator_loss(&self, noise: &[Vec<f64>]) -> LossGrad {
        let (g, d) = (&self.generator, &self.discriminator);
        let mut grad = vec![0.0; g.param_count()];
        let mut scratch = vec![0.0; d.param_count()];
        let (mut loss, mut sum_fake) = (0.0, 0.0);
        let nf = noise.len() as f64;
        for z in noise {
            let gt = g.trace(z);
            let dt = d.trace(&gt.out);
            let s = dt.out[0];
            loss += softplus(-s) / nf;
            let p = sigmoid(s);
            sum_fake += p;
            let dx = d.backward(&dt, &[(p - 1.0) / nf], &mut scratch);
            g.backward(&gt, &dx, &mut grad);
        }
        LossGrad {
            loss,
            grad,
            mean_d_real: f64::NAN,
            mean_d_fake: sum_fake / nf,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GanModel = serde_json::from_str(s)?;
        for net in [&m.generator, &m.discriminator] {
            if net.layers.is_empty() {
                return Err(Error::Schema("network without layers".into()));
            }
            for l in &net.layers {
                if l.weights.len() != l.shape[0] * l.shape[1] || l.bias.len() != l.shape[0] {
                    return Err(Error::Schema(format!("layer shape {:?} does not match its arrays", l.shape)));
                }
            }
            if !net.is_finite() {
                return Err(Error::Schema("non-finite weights".into()));
            }
        }
        Ok(m)
    }
}

struct Stepper {
    lr: f64,
    kind: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Stepper {
    fn new(cfg: &GanConfig, n: usize) -> Self {
        Self {
            lr: cfg.learning_rate,
            kind: cfg.optimizer,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grad: &[f64]) {
        let mut p = net.params();
        match self.kind {
            Optimizer::Sgd => p.iter_mut().zip(grad).for_each(|(w, g)| *w -= self.lr * g),
            Optimizer::Adam { beta1, beta2 } => {
                self.t += 1;
                let (c1, c2) = (1.0 - beta1.powi(self.t), 1.0 - beta2.powi(self.t));
                for i in 0..p.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    p[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
        net.set_params(&p);
    }
}

fn noise_batch(rng: &mut seed::Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

fn real_batch(rng: &mut seed::Rng, real: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if real.len() < n {
        (0..n).map(|_| real[rng.random_range(0..real.len())].clone()).collect()
    } else {
        index::sample(rng, real.len(), n).iter().map(|i| real[i].clone()).collect()
    }
}

/// Alternating adversarial training for `cfg.steps` generator updates, each
/// preceded by `cfg.disc_steps_per_gen` discriminator updates.
pub fn train_gan(model: GanModel, real: &[Vec<f64>], cfg: &GanConfig) -> Result<(GanModel, TrainTrace)> {
    cfg.validate()?;
    if real.len() < 2 {
        return Err(Error::InvalidArgument(format!("GAN needs at least 2 real vectors, got {}", real.len())));
    }
    let dim = model.generator.output_dim();
    if model.discriminator.input_dim() != dim || model.generator.input_dim() != cfg.noise_dim {
        return Err(Error::Shape("config does not match model dimensions".into()));
    }
    if let Some(r) = real.iter().find(|r| r.len() != dim) {
        return Err(Error::Shape(format!("real vector of length {}, model expects {dim}", r.len())));
    }
    if real.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("real vectors must lie in [0, 1]".into()));
    }
    let real: Vec<Vec<f64>> = real
        .iter()
        .map(|r| r.iter().map(|v| v.clamp(REAL_CLAMP, 1.0 - REAL_CLAMP)).collect())
        .collect();

    let mut model = model;
    let mut rng = seed::rng(seed::derive(cfg.seed, "gan-train", &[]));
    let mut d_opt = Stepper::new(cfg, model.discriminator.param_count());
    let mut g_opt = Stepper::new(cfg, model.generator.param_count());
    let mut trace = Vec::with_capacity(cfg.steps / cfg.log_every + 1);

    for step in 1..=cfg.steps {
        let mut d_last = None;
        for _ in 0..cfg.disc_steps_per_gen {
            let xb = real_batch(&mut rng, &real, cfg.batch_size);
            let zb = noise_batch(&mut rng, cfg.batch_size, cfg.noise_dim);
            let lg = model.discriminator_loss(&xb, &zb);
            if !lg.loss.is_finite() {
                return Err(Error::GanDivergence { step });
            }
            d_opt.step(&mut model.discriminator, &lg.grad);
            d_last = Some(lg);
        }
        let zb = noise_batch(&mut rng, cfg.batch_size, cfg.noise_dim);
        let g = model.generator_loss(&zb);
        if !g.loss.is_finite() {
            return Err(Error::GanDivergence { step });
        }
        g_opt.step(&mut model.generator, &g.grad);
        if !model.generator.is_finite() || !model.discriminator.is_finite() {
            return Err(Error::GanDivergence { step });
        }
        model.trained_steps += 1;

        if step % cfg.log_every == 0 || step == 1 || step == cfg.steps {
            let d = d_last.expect("at least one discriminator step");
            trace.push(TraceRecord {
                step: model.trained_steps,
                disc_loss: d.loss,
                gen_loss: g.loss,
                mean_d_real: d.mean_d_real,
                mean_d_fake: d.mean_d_fake,
            });
        }
    }
    model.config = cfg.clone();
    Ok((model, trace))
}

/// Draws `count` vectors from the generator. Coordinates are kept strictly
/// inside (0, 1) even where the squash saturates in floating point.
pub fn generate(model: &GanModel, count: usize, seed: u64) -> SimulationBatch {
    let mut rng = seed::rng(seed);
    let dim = model.generator.input_dim();
    let lo = f64::EPSILON;
    let hi = 1.0 - f64::EPSILON;
    let vectors = (0..count)
        .map(|_| {
            let z: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            model.generator.forward(&z).into_iter().map(|v| v.clamp(lo, hi)).collect()
        })
        .collect();
    SimulationBatch {
        vectors,
        provenance: Provenance::Gan,
        source_meta: Default::default(),
    }
    .with_meta("seed", seed)
    .with_meta("trained_steps", model.trained_steps)
}
