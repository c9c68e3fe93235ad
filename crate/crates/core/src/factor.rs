//! Masked tensor factorization `T̂[u,n,m] = Σ_k U[u,k]·V[k,m,n]` trained by
//! per-entry SGD, latent-dimension selection on held-out entries, and
//! completion of a sparse tensor into a dense one.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::{Cell, DenseTensor, SparseTensor, TensorIndex};

/// Maps the raw factor product to a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    /// Clamp to `[0, 1]`. Training fits the unclamped product, which bounds
    /// the clamped error from above for targets in `[0, 1]`.
    #[default]
    LinearClamped,
    Logistic,
}

impl Link {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            Link::LinearClamped => raw.clamp(0.0, 1.0),
            Link::Logistic => 1.0 / (1.0 + (-raw).exp()),
        }
    }

    /// Value and derivative of the function training fits.
    fn train_value(self, raw: f64) -> (f64, f64) {
        match self {
            Link::LinearClamped => (raw, 1.0),
            Link::Logistic => {
                let p = 1.0 / (1.0 + (-raw).exp());
                (p, p * (1.0 - p))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    k: usize,
    link: Link,
    learners: usize,
    questions: usize,
    attempts: usize,
    /// U×K, row-major.
    learner: Vec<f64>,
    /// One K-vector per (question, attempt) item, item `n·M + m`.
    item: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FactorModelRepr {
    k: usize,
    link: Link,
    learner_factors: Vec<Vec<f64>>,
    /// K×M×N
    knowledge_factors: Vec<Vec<Vec<f64>>>,
}

impl Serialize for FactorModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let learner_factors = self.learner.chunks(self.k).map(<[f64]>::to_vec).collect();
        let knowledge_factors = (0..self.k)
            .map(|k| {
                (0..self.attempts)
                    .map(|m| (0..self.questions).map(|n| self.v(n, m)[k]).collect())
                    .collect()
            })
            .collect();
        FactorModelRepr {
            k: self.k,
            link: self.link,
            learner_factors,
            knowledge_factors,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FactorModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = FactorModelRepr::deserialize(d)?;
        let k = r.k;
        let learners = r.learner_factors.len();
        if k == 0 || r.knowledge_factors.len() != k {
            return Err(D::Error::custom("knowledge_factors must have k slabs"));
        }
        let attempts = r.knowledge_factors[0].len();
        let questions = r.knowledge_factors[0].first().map_or(0, Vec::len);
        if r.learner_factors.iter().any(|row| row.len() != k) {
            return Err(D::Error::custom("learner_factors rows must have k columns"));
        }
        let mut item = vec![0.0; questions * attempts * k];
        for (kk, slab) in r.knowledge_factors.iter().enumerate() {
            if slab.len() != attempts || slab.iter().any(|row| row.len() != questions) {
                return Err(D::Error::custom("ragged knowledge_factors"));
            }
            for (m, row) in slab.iter().enumerate() {
                for (n, &v) in row.iter().enumerate() {
                    item[(n * attempts + m) * k + kk] = v;
                }
            }
        }
        let learner: Vec<f64> = r.learner_factors.into_iter().flatten().collect();
        if learner.iter().chain(&item).any(|v| !v.is_finite()) {
            return Err(D::Error::custom("non-finite factor"));
        }
        Ok(FactorModel {
            k,
            link: r.link,
            learners,
            questions,
            attempts,
            learner,
            item,
        })
    }
}

impl FactorModel {
    pub fn zeros(dims: (usize, usize, usize), k: usize, link: Link) -> Self {
        let (learners, questions, attempts) = dims;
        Self {
            k,
            link,
            learners,
            questions,
            attempts,
            learner: vec![0.0; learners * k],
            item: vec![0.0; questions * attempts * k],
        }
    }

    fn uniform(dims: (usize, usize, usize), k: usize, link: Link, scale: f64, rng: &mut seed::Rng) -> Self {
        let mut m = Self::zeros(dims, k, link);
        for v in m.learner.iter_mut().chain(m.item.iter_mut()) {
            *v = rng.random_range(-scale..=scale);
        }
        m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.learners, self.questions, self.attempts)
    }

    pub fn learner_factors(&self, u: usize) -> &[f64] {
        &self.learner[u * self.k..(u + 1) * self.k]
    }

    pub fn learner_factors_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.learner[u * self.k..(u + 1) * self.k]
    }

    fn item_id(&self, n: usize, m: usize) -> usize {
        n * self.attempts + m
    }

    /// `V[·, m, n]` as a K-vector.
    pub fn v(&self, n: usize, m: usize) -> &[f64] {
        let j = self.item_id(n, m);
        &self.item[j * self.k..(j + 1) * self.k]
    }

    pub fn v_mut(&mut self, n: usize, m: usize) -> &mut [f64] {
        let j = self.item_id(n, m);
        &mut self.item[j * self.k..(j + 1) * self.k]
    }

    pub fn raw(&self, u: usize, n: usize, m: usize) -> f64 {
        dot(self.learner_factors(u), self.v(n, m))
    }

    /// Predicted probability for learner `u`, question `n`, attempt position `m`.
    pub fn predict(&self, u: usize, n: usize, m: usize) -> f64 {
        self.link.apply(self.raw(u, n, m))
    }

    fn is_finite(&self) -> bool {
        self.learner.iter().chain(&self.item).all(|v| v.is_finite())
    }

    fn l2(&self) -> f64 {
        self.learner.iter().chain(&self.item).map(|v| v * v).sum()
    }

    /// Loss of one observed entry as SGD sees it: squared error plus the
    /// entry's share of the L2 penalty on the two factor vectors it touches.
    pub fn entry_loss(&self, (u, n, m): Cell, target: f64, reg_learner: f64, reg_item: f64) -> f64 {
        let (p, _) = self.link.train_value(self.raw(u, n, m));
        let lu: f64 = self.learner_factors(u).iter().map(|x| x * x).sum();
        let lv: f64 = self.v(n, m).iter().map(|x| x * x).sum();
        (target - p).powi(2) + reg_learner * lu + reg_item * lv
    }

    /// Gradient of [`entry_loss`](Self::entry_loss) w.r.t. `U[u,·]` and `V[·,m,n]`.
    pub fn entry_gradient(
        &self,
        (u, n, m): Cell,
        target: f64,
        reg_learner: f64,
        reg_item: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let pu = self.learner_factors(u);
        let pv = self.v(n, m);
        let (p, dp) = self.link.train_value(dot(pu, pv));
        let g = -2.0 * (target - p) * dp;
        let gu = pu.iter().zip(pv).map(|(a, b)| g * b + 2.0 * reg_learner * a).collect();
        let gv = pu.iter().zip(pv).map(|(a, b)| g * a + 2.0 * reg_item * b).collect();
        (gu, gv)
    }

    fn check_shape(&self, index: &TensorIndex) -> Result<()> {
        if self.dims() != index.dims() {
            return Err(Error::Shape(format!(
                "model trained for {:?}, tensor is {:?}",
                self.dims(),
                index.dims()
            )));
        }
        Ok(())
    }

    /// RMSE of predictions against the entries of `t`.
    pub fn rmse(&self, t: &SparseTensor) -> f64 {
        if t.is_empty() {
            return f64::NAN;
        }
        let sse: f64 = t
            .entries()
            .iter()
            .map(|(&(u, n, m), &v)| (v - self.predict(u, n, m)).powi(2))
            .sum();
        (sse / t.len() as f64).sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
    pub init_scale: f64,
    pub seed: u64,
    pub link: Link,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            learning_rate: 0.01,
            l2_lambda: 0.05,
            epochs: 500,
            early_stop_patience: 20,
            init_scale: 0.1,
            seed: 0,
            link: Link::LinearClamped,
        }
    }
}

impl TrainConfig {
    /// Checks the ranges a config file may hold. `train_sgd` itself accepts
    /// any positive finite rate so that divergence is reported, not masked.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning rate {} not in (0, 1]", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad(format!("l2 lambda {} must be non-negative", self.l2_lambda));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init scale {} must be positive", self.init_scale));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Regularized objective over the training entries.
    pub train_loss: f64,
    pub train_rmse: f64,
    pub validation_rmse: Option<f64>,
}

/// Splits observed entries into train and validation sets.
///
/// `round(fraction·len)` entries go to validation. One randomly chosen entry
/// per learner is pinned to train.
pub fn split_holdout(t: &SparseTensor, fraction: f64, seed: u64) -> Result<(SparseTensor, SparseTensor)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout fraction {fraction} not in (0, 1)")));
    }
    if t.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "holdout split needs at least 10 observed entries, got {}",
            t.len()
        )));
    }
    let n_val = (fraction * t.len() as f64).round() as usize;
    let mut cells: Vec<Cell> = t.entries().keys().copied().collect();
    cells.shuffle(&mut seed::rng(seed));

    let mut pinned = vec![false; t.dims().0];
    let mut eligible = Vec::with_capacity(cells.len());
    for &c in &cells {
        if pinned[c.0] {
            eligible.push(c);
        } else {
            pinned[c.0] = true;
        }
    }
    if n_val > eligible.len() {
        return Err(Error::Stratification(format!(
            "{n_val} validation entries requested but only {} can leave their learner with training data",
            eligible.len()
        )));
    }
    let val_cells: std::collections::BTreeSet<Cell> = eligible[..n_val].iter().copied().collect();
    let (val, train): (BTreeMap<_, _>, BTreeMap<_, _>) = t
        .entries()
        .iter()
        .map(|(&c, &v)| (c, v))
        .partition(|(c, _)| val_cells.contains(c));
    Ok((t.with_entries(train), t.with_entries(val)))
}

/// Fits a factor model to the observed entries of `t`.
///
/// Each epoch visits the entries in a fresh shuffled order. The L2 penalty
/// on a factor vector is spread evenly over the entries that touch it, so one
/// epoch of SGD follows the gradient of
/// `Σ (τ − T̂)² + λ(‖U‖² + ‖V‖²)`; vectors with no entries decay once per
/// epoch. With a validation set, training stops after `early_stop_patience`
/// epochs without improvement and the best snapshot is returned.
pub fn train_sgd(
    t: &SparseTensor,
    cfg: &TrainConfig,
    validation: Option<&SparseTensor>,
) -> Result<(FactorModel, Vec<EpochRecord>)> {
    if t.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty tensor".into()));
    }
    if cfg.k == 0 || cfg.epochs == 0 || !(cfg.learning_rate > 0.0) || !(cfg.init_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid train config {cfg:?}")));
    }
    let dims = t.dims();
    let (_, _, nm) = dims;
    let mut rng = seed::rng(cfg.seed);
    let mut model = FactorModel::uniform(dims, cfg.k, cfg.link, cfg.init_scale, &mut rng);

    let mut entries: Vec<(Cell, f64)> = t.entries().iter().map(|(&c, &v)| (c, v)).collect();
    let mut learner_count = vec![0usize; dims.0];
    let mut item_count = vec![0usize; dims.1 * dims.2];
    for &((u, n, m), _) in &entries {
        learner_count[u] += 1;
        item_count[n * nm + m] += 1;
    }
    let lr = cfg.learning_rate;
    let lambda = cfg.l2_lambda;
    let k = cfg.k;

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, FactorModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        entries.shuffle(&mut rng);
        for &((u, n, m), target) in &entries {
            let j = n * nm + m;
            let reg_u = lambda / learner_count[u] as f64;
            let reg_v = lambda / item_count[j] as f64;
            let (pu, pv) = split_factors(&mut model, u, j, k);
            let (p, dp) = cfg.link.train_value(dot(pu, pv));
            let g = -2.0 * (target - p) * dp;
            for (a, b) in pu.iter_mut().zip(pv.iter_mut()) {
                let (old_a, old_b) = (*a, *b);
                *a -= lr * (g * old_b + 2.0 * reg_u * old_a);
                *b -= lr * (g * old_a + 2.0 * reg_v * old_b);
            }
        }
        let decay = 1.0 - 2.0 * lr * lambda;
        for (u, _) in learner_count.iter().enumerate().filter(|(_, &c)| c == 0) {
            model.learner_factors_mut(u).iter_mut().for_each(|v| *v *= decay);
        }
        for (j, _) in item_count.iter().enumerate().filter(|(_, &c)| c == 0) {
            model.item[j * k..(j + 1) * k].iter_mut().for_each(|v| *v *= decay);
        }

        let sse: f64 = entries
            .iter()
            .map(|&((u, n, m), target)| (target - cfg.link.train_value(model.raw(u, n, m)).0).powi(2))
            .sum();
        let train_loss = sse + lambda * model.l2();
        if !train_loss.is_finite() || !model.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let validation_rmse = validation.map(|v| model.rmse(v));
        trace.push(EpochRecord {
            epoch,
            train_loss,
            train_rmse: model.rmse(t),
            validation_rmse,
        });

        if let Some(vr) = validation_rmse {
            match &best {
                Some((b, _)) if vr >= *b => since_best += 1,
                _ => {
                    best = Some((vr, model.clone()));
                    since_best = 0;
                }
            }
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let model = match best {
        Some((_, m)) => m,
        None => model,
    };
    Ok((model, trace))
}

/// Disjoint mutable views of learner row `u` and item `j`.
fn split_factors(model: &mut FactorModel, u: usize, j: usize, k: usize) -> (&mut [f64], &mut [f64]) {
    (
        &mut model.learner[u * k..(u + 1) * k],
        &mut model.item[j * k..(j + 1) * k],
    )
}

/// Fills the missing cells of `t` with model predictions.
pub fn complete(model: &FactorModel, t: &SparseTensor) -> Result<DenseTensor> {
    model.check_shape(t.index())?;
    Ok(DenseTensor::merge(t, |(u, n, m)| model.predict(u, n, m)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    /// Mean best validation RMSE over the trials that did not diverge; NaN if none.
    pub mean_rmse: f64,
    pub sd: f64,
    /// Trials that completed.
    pub trials: usize,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionReport {
    pub per_k: Vec<KRow>,
    pub chosen_k: usize,
    pub trials: usize,
}

impl KSelectionReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "k,mean_rmse,sd,trials")?;
        for r in &self.per_k {
            writeln!(w, "{},{},{},{}", r.k, r.mean_rmse, r.sd, r.trials)?;
        }
        Ok(())
    }

    /// Reads the CSV written by [`write_csv`](Self::write_csv), re-deriving
    /// the chosen k.
    pub fn from_csv(s: &str, trials: usize) -> Result<Self> {
        let mut lines = s.lines();
        if lines.next().map(str::trim) != Some("k,mean_rmse,sd,trials") {
            return Err(Error::Schema("k-selection CSV header must be k,mean_rmse,sd,trials".into()));
        }
        let mut per_k = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse_err = || Error::Schema(format!("k-selection CSV row {}: {line:?}", i + 2));
            if f.len() != 4 {
                return Err(parse_err());
            }
            let done: usize = f[3].parse().map_err(|_| parse_err())?;
            per_k.push(KRow {
                k: f[0].parse().map_err(|_| parse_err())?,
                mean_rmse: f[1].parse().map_err(|_| parse_err())?,
                sd: f[2].parse().map_err(|_| parse_err())?,
                trials: done,
                diverged: trials.saturating_sub(done),
            });
        }
        let chosen_k = argmin_k(&per_k).ok_or_else(|| Error::Schema("no usable k rows".into()))?;
        Ok(Self { per_k, chosen_k, trials })
    }
}

fn argmin_k(rows: &[KRow]) -> Option<usize> {
    rows.iter()
        .filter(|r| r.mean_rmse.is_finite())
        .fold(None, |best: Option<&KRow>, r| match best {
            Some(b) if b.mean_rmse < r.mean_rmse || (b.mean_rmse == r.mean_rmse && b.k < r.k) => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k)
}

pub const DEFAULT_K_RANGE: RangeInclusive<usize> = 1..=20;
pub const DEFAULT_HOLDOUT: f64 = 0.2;

/// Picks the latent dimension with the lowest mean validation RMSE.
///
/// Trial `i` uses the same train/validation split for every k, so the
/// candidates are compared on identical data; factor initialisation is
/// seeded per `(k, i)`. Trials run on the current rayon pool and the report
/// does not depend on its size.
pub fn select_k(
    t: &SparseTensor,
    k_range: RangeInclusive<usize>,
    trials: usize,
    template: &TrainConfig,
    seed: u64,
) -> Result<KSelectionReport> {
    let (lo, hi) = (*k_range.start(), *k_range.end());
    if lo == 0 || hi < lo {
        return Err(Error::InvalidArgument(format!("bad k range [{lo}, {hi}]")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let splits = (0..trials)
        .map(|i| split_holdout(t, DEFAULT_HOLDOUT, seed::derive(seed, "kselect-split", &[i as u64])))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (lo..=hi).flat_map(|k| (0..trials).map(move |i| (k, i))).collect();
    let outcomes: Vec<Result<Option<f64>>> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let cfg = TrainConfig {
                k,
                seed: seed::derive(seed, "kselect-init", &[k as u64, i as u64]),
                ..template.clone()
            };
            let (train, val) = &splits[i];
            match train_sgd(train, &cfg, Some(val)) {
                Ok((_, trace)) => Ok(trace
                    .iter()
                    .filter_map(|r| r.validation_rmse)
                    .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))),
                Err(Error::Divergence { epoch }) => {
                    log::warn!("k={k} trial {i} diverged at epoch {epoch}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut per_k = Vec::with_capacity(hi - lo + 1);
    let mut outcomes = outcomes.into_iter();
    for k in lo..=hi {
        let mut rmses = Vec::with_capacity(trials);
        for _ in 0..trials {
            if let Some(r) = outcomes.next().expect("one outcome per job")? {
                rmses.push(r);
            }
        }
        let done = rmses.len();
        let (mean_rmse, sd) = if done == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = rmses.iter().sum::<f64>() / done as f64;
            let sd = if done > 1 {
                (rmses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (done - 1) as f64).sqrt()
            } else {
                0.0
            };
            (mean, sd)
        };
        per_k.push(KRow {
            k,
            mean_rmse,
            sd,
            trials: done,
            diverged: trials - done,
        });
    }
    let chosen_k = argmin_k(&per_k).ok_or(Error::Divergence { epoch: 0 })?;
    Ok(KSelectionReport {
        per_k,
        chosen_k,
        trials,
    })
}
