//! Learner × question × attempt performance tensors.
//!
//! Cells are addressed as `(u, n, m)` with `m` the 0-based attempt position
//! (attempt number minus one). Learner and question axes follow first
//! appearance in the input.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    M,
    E,
    H,
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" => Ok(Difficulty::M),
            "E" | "e" => Ok(Difficulty::E),
            "H" | "h" => Ok(Difficulty::H),
            other => Err(Error::Schema(format!("unknown difficulty {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub learner_id: String,
    pub question_id: String,
    pub difficulty: Option<Difficulty>,
    pub attempt: usize,
    pub outcome: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "AxesRepr", into = "AxesRepr")]
pub struct TensorIndex {
    learners: Vec<String>,
    questions: Vec<String>,
    attempts: usize,
    learner_pos: HashMap<String, usize>,
    question_pos: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct AxesRepr {
    learners: Vec<String>,
    questions: Vec<String>,
    attempts: usize,
}

impl TryFrom<AxesRepr> for TensorIndex {
    type Error = Error;

    fn try_from(r: AxesRepr) -> Result<Self> {
        TensorIndex::new(r.learners, r.questions, r.attempts)
    }
}

impl From<TensorIndex> for AxesRepr {
    fn from(t: TensorIndex) -> Self {
        AxesRepr {
            learners: t.learners,
            questions: t.questions,
            attempts: t.attempts,
        }
    }
}

impl PartialEq for TensorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.learners == other.learners
            && self.questions == other.questions
            && self.attempts == other.attempts
    }
}

fn position_map(ids: &[String], axis: &str) -> Result<HashMap<String, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::Schema(format!("duplicate {axis} id {id:?}")));
        }
    }
    Ok(map)
}

impl TensorIndex {
    pub fn new(learners: Vec<String>, questions: Vec<String>, attempts: usize) -> Result<Self> {
        if learners.is_empty() || questions.is_empty() || attempts == 0 {
            return Err(Error::Schema(format!(
                "every axis needs at least one position (got {}x{}x{attempts})",
                learners.len(),
                questions.len()
            )));
        }
        let learner_pos = position_map(&learners, "learner")?;
        let question_pos = position_map(&questions, "question")?;
        Ok(Self {
            learners,
            questions,
            attempts,
            learner_pos,
            question_pos,
        })
    }

    /// Index with generated ids `L1..`, `Q1..`.
    pub fn numbered(learners: usize, questions: usize, attempts: usize) -> Result<Self> {
        Self::new(
            (1..=learners).map(|i| format!("L{i}")).collect(),
            (1..=questions).map(|i| format!("Q{i}")).collect(),
            attempts,
        )
    }

    /// `(U, N, M)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.learners.len(), self.questions.len(), self.attempts)
    }

    pub fn cells(&self) -> usize {
        self.learners.len() * self.questions.len() * self.attempts
    }

    pub fn learners(&self) -> &[String] {
        &self.learners
    }

    pub fn questions(&self) -> &[String] {
        &self.questions
    }

    pub fn attempts(&self) -> usize {
        self.attempts
    }

    pub fn learner_position(&self, id: &str) -> Option<usize> {
        self.learner_pos.get(id).copied()
    }

    pub fn question_position(&self, id: &str) -> Option<usize> {
        self.question_pos.get(id).copied()
    }

    pub fn contains(&self, (u, n, m): Cell) -> bool {
        u < self.learners.len() && n < self.questions.len() && m < self.attempts
    }

    pub(crate) fn flat(&self, (u, n, m): Cell) -> usize {
        (u * self.questions.len() + n) * self.attempts + m
    }
}

/// `(learner, question, attempt)` positions, all 0-based.
pub type Cell = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    index: TensorIndex,
    entries: BTreeMap<Cell, f64>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRepr {
    axes: TensorIndex,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl SparseTensor {
    pub fn new(index: TensorIndex, entries: BTreeMap<Cell, f64>) -> Result<Self> {
        for (&cell, &v) in &entries {
            if !index.contains(cell) {
                return Err(Error::Shape(format!(
                    "entry {cell:?} outside dims {:?}",
                    index.dims()
                )));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "entry {cell:?} = {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self { index, entries })
    }

    pub fn index(&self) -> &TensorIndex {
        &self.index
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.index.dims()
    }

    pub fn entries(&self) -> &BTreeMap<Cell, f64> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cell: Cell) -> Option<f64> {
        self.entries.get(&cell).copied()
    }

    /// Same axes, a subset of the entries.
    pub(crate) fn with_entries(&self, entries: BTreeMap<Cell, f64>) -> SparseTensor {
        SparseTensor {
            index: self.index.clone(),
            entries,
        }
    }

    /// Fraction of cells with no observation.
    pub fn sparsity(&self) -> f64 {
        let total = self.index.cells();
        let missing = total - self.entries.len();
        missing as f64 / total as f64
    }

    /// Per-learner observation counts.
    pub fn learner_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.index.learners.len()];
        for &(u, _, _) in self.entries.keys() {
            counts[u] += 1;
        }
        counts
    }

    /// Writes the entries as an ingestible CSV in cell order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Schema(e.to_string());
        out.write_record(["learner_id", "question_id", "attempt", "outcome"])
            .map_err(err)?;
        for (&(u, n, m), v) in &self.entries {
            out.write_record([
                self.index.learners[u].as_str(),
                self.index.questions[n].as_str(),
                &(m + 1).to_string(),
                &v.to_string(),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = SnapshotRepr {
            axes: self.index.clone(),
            entries: self
                .entries
                .iter()
                .map(|(&(u, n, m), &v)| (u, n, m, v))
                .collect(),
        };
        Ok(serde_json::to_string(&repr)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let repr: SnapshotRepr = serde_json::from_str(s)?;
        let mut entries = BTreeMap::new();
        for (u, n, m, v) in repr.entries {
            if entries.insert((u, n, m), v).is_some() {
                return Err(Error::Schema(format!("duplicate entry ({u}, {n}, {m})")));
            }
        }
        Self::new(repr.axes, entries)
    }
}

/// Reads a performance log; see [`ingest_csv_filtered`].
pub fn ingest_csv<R: Read>(reader: R) -> Result<(SparseTensor, usize)> {
    ingest_csv_filtered(reader, None)
}

/// Reads a performance log, optionally keeping one difficulty level only.
///
/// Required columns: `learner_id`, `question_id`, `attempt`, `outcome`;
/// `difficulty` is optional. Returns the tensor and the number of data rows
/// read (filtered rows included).
pub fn ingest_csv_filtered<R: Read>(
    reader: R,
    difficulty: Option<Difficulty>,
) -> Result<(SparseTensor, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| col(name).ok_or_else(|| Error::Schema(format!("missing column {name:?}")));
    let c_learner = required("learner_id")?;
    let c_question = required("question_id")?;
    let c_attempt = required("attempt")?;
    let c_outcome = required("outcome")?;
    let c_difficulty = col("difficulty");

    let mut learners: Vec<String> = Vec::new();
    let mut questions: Vec<String> = Vec::new();
    let mut learner_pos: HashMap<String, usize> = HashMap::new();
    let mut question_pos: HashMap<String, usize> = HashMap::new();
    let mut entries = BTreeMap::new();
    let mut max_attempt = 0;
    let mut rows = 0;

    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Schema(e.to_string()))?;
        rows += 1;
        let line = rec.position().map_or(rows as u64 + 1, |p| p.line());
        let field = |c: usize| {
            rec.get(c)
                .ok_or_else(|| Error::Schema(format!("line {line}: missing field {c}")))
        };
        if let (Some(want), Some(c)) = (difficulty, c_difficulty) {
            let raw = field(c)?;
            if raw.is_empty() || raw.parse::<Difficulty>()? != want {
                continue;
            }
        }
        let learner = field(c_learner)?;
        let question = field(c_question)?;
        let attempt_raw = field(c_attempt)?;
        let attempt = match attempt_raw.parse::<usize>() {
            Ok(a) if a >= 1 => a,
            _ => {
                return Err(Error::BadAttempt {
                    line,
                    value: attempt_raw.to_string(),
                })
            }
        };
        let outcome_raw = field(c_outcome)?;
        let outcome = match outcome_raw.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => v,
            _ => {
                return Err(Error::BadOutcome {
                    line,
                    value: outcome_raw.to_string(),
                })
            }
        };
        let u = *learner_pos.entry(learner.to_string()).or_insert_with(|| {
            learners.push(learner.to_string());
            learners.len() - 1
        });
        let n = *question_pos.entry(question.to_string()).or_insert_with(|| {
            questions.push(question.to_string());
            questions.len() - 1
        });
        if entries.insert((u, n, attempt - 1), outcome).is_some() {
            return Err(Error::DuplicateObservation {
                line,
                learner: learner.to_string(),
                question: question.to_string(),
                attempt,
            });
        }
        max_attempt = max_attempt.max(attempt);
    }

    if entries.is_empty() {
        return Err(Error::Schema("no observations".into()));
    }
    let index = TensorIndex::new(learners, questions, max_attempt)?;
    Ok((SparseTensor::new(index, entries)?, rows))
}

/// Fully populated tensor with a record of which cells were observed.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    index: TensorIndex,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl DenseTensor {
    /// Copies the observed entries of `sparse` verbatim and fills every other
    /// cell with `fill(cell)`, clamped to `[0, 1]`.
    pub fn merge(sparse: &SparseTensor, mut fill: impl FnMut(Cell) -> f64) -> Self {
        let index = sparse.index.clone();
        let (nu, nn, nm) = index.dims();
        let mut values = Vec::with_capacity(index.cells());
        let mut observed = Vec::with_capacity(index.cells());
        for u in 0..nu {
            for n in 0..nn {
                for m in 0..nm {
                    match sparse.get((u, n, m)) {
                        Some(v) => {
                            values.push(v);
                            observed.push(true);
                        }
                        None => {
                            values.push(fill((u, n, m)).clamp(0.0, 1.0));
                            observed.push(false);
                        }
                    }
                }
            }
        }
        Self {
            index,
            values,
            observed,
        }
    }

    pub fn index(&self) -> &TensorIndex {
        &self.index
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.index.dims()
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.values[self.index.flat(cell)]
    }

    pub fn is_observed(&self, cell: Cell) -> bool {
        self.observed[self.index.flat(cell)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    /// Every cell, as a sparse tensor (all entries present).
    pub fn to_sparse(&self) -> SparseTensor {
        let (nu, nn, nm) = self.dims();
        let mut entries = BTreeMap::new();
        for u in 0..nu {
            for n in 0..nn {
                for m in 0..nm {
                    entries.insert((u, n, m), self.get((u, n, m)));
                }
            }
        }
        self.as_sparse(entries)
    }

    fn as_sparse(&self, entries: BTreeMap<Cell, f64>) -> SparseTensor {
        SparseTensor {
            index: self.index.clone(),
            entries,
        }
    }

    /// The U×M learners-by-attempts slice for question position `n`.
    pub fn slice_question(&self, n: usize) -> Result<Matrix> {
        let (nu, nn, nm) = self.dims();
        if n >= nn {
            return Err(Error::Index {
                axis: "question",
                index: n,
                len: nn,
            });
        }
        let mut out = Matrix::zeros(nu, nm);
        for u in 0..nu {
            for m in 0..nm {
                out.set(u, m, self.get((u, n, m)));
            }
        }
        Ok(out)
    }

    /// Mean over questions of every question slice.
    pub fn mean_slice(&self) -> Matrix {
        let (nu, nn, nm) = self.dims();
        let mut out = Matrix::zeros(nu, nm);
        for u in 0..nu {
            for m in 0..nm {
                let s: f64 = (0..nn).map(|n| self.get((u, n, m))).sum();
                out.set(u, m, s / nn as f64);
            }
        }
        out
    }

    /// Writes a U×M matrix back into question position `n`.
    pub fn set_question_slice(&mut self, n: usize, slice: &Matrix) -> Result<()> {
        let (nu, nn, nm) = self.dims();
        if n >= nn {
            return Err(Error::Index {
                axis: "question",
                index: n,
                len: nn,
            });
        }
        if slice.rows() != nu || slice.cols() != nm {
            return Err(Error::Shape(format!(
                "slice is {}x{}, tensor expects {nu}x{nm}",
                slice.rows(),
                slice.cols()
            )));
        }
        for u in 0..nu {
            for m in 0..nm {
                let i = self.index.flat((u, n, m));
                self.values[i] = slice.get(u, m);
            }
        }
        Ok(())
    }
}

/// Parameters for a planted low-rank fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub learners: usize,
    pub questions: usize,
    pub attempts: usize,
    pub planted_rank: usize,
    pub sparsity_target: f64,
    pub noise_sd: f64,
    /// Observe the (noisy) probabilities themselves instead of Bernoulli draws.
    #[serde(default)]
    pub continuous: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dims: (usize, usize, usize), planted_rank: usize, sparsity_target: f64, seed: u64) -> Self {
        Self {
            learners: dims.0,
            questions: dims.1,
            attempts: dims.2,
            planted_rank,
            sparsity_target,
            noise_sd: 0.0,
            continuous: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.learners == 0 || self.questions == 0 || self.attempts == 0 {
            return bad("synthetic dims must be positive".into());
        }
        let items = self.questions * self.attempts;
        if self.planted_rank == 0 || self.planted_rank > self.learners.min(items) {
            return bad(format!(
                "planted rank {} not in [1, {}]",
                self.planted_rank,
                self.learners.min(items)
            ));
        }
        if !(0.0..1.0).contains(&self.sparsity_target) {
            return bad(format!("sparsity target {} not in [0, 1)", self.sparsity_target));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise sd {} must be non-negative", self.noise_sd));
        }
        Ok(())
    }
}

/// Variance of each planted raw score before the logistic squash.
const PLANTED_SCORE_VAR: f64 = 2.25;
const SYNTH_RETRIES: usize = 64;

/// Generates `(observations, ground_truth)` for a planted fixture.
///
/// Ground truth is `logistic(A·B)` with Gaussian factors of rank
/// `planted_rank`. Exactly `round((1 - sparsity_target)·cells)` cells are
/// observed and every learner keeps at least one of them.
pub fn synth_generate(spec: &SynthSpec) -> Result<(SparseTensor, DenseTensor)> {
    spec.validate()?;
    let index = TensorIndex::numbered(spec.learners, spec.questions, spec.attempts)?;
    let (nu, nn, nm) = index.dims();
    let r = spec.planted_rank;
    let mut rng = seed::rng(spec.seed);
    let factor_sd = (PLANTED_SCORE_VAR / r as f64).sqrt().sqrt();
    let normal = |rng: &mut seed::Rng| -> f64 { StandardNormal.sample(rng) };
    let learner_f: Vec<f64> = (0..nu * r).map(|_| factor_sd * normal(&mut rng)).collect();
    let item_f: Vec<f64> = (0..r * nn * nm).map(|_| factor_sd * normal(&mut rng)).collect();

    let mut truth = Vec::with_capacity(index.cells());
    for u in 0..nu {
        for item in 0..nn * nm {
            let raw: f64 = (0..r)
                .map(|k| learner_f[u * r + k] * item_f[k * nn * nm + item])
                .sum();
            truth.push(1.0 / (1.0 + (-raw).exp()));
        }
    }
    let ground_truth = DenseTensor {
        index: index.clone(),
        values: truth,
        observed: vec![true; index.cells()],
    };

    let total = index.cells();
    let n_obs = ((1.0 - spec.sparsity_target) * total as f64).round() as usize;
    if n_obs < nu {
        return Err(Error::InvalidArgument(format!(
            "sparsity {} leaves {n_obs} observations for {nu} learners",
            spec.sparsity_target
        )));
    }
    let mut cells: Vec<usize> = (0..total).collect();
    let mut chosen = None;
    for _ in 0..SYNTH_RETRIES {
        cells.shuffle(&mut rng);
        let picked = &cells[..n_obs];
        let mut per_learner = vec![0usize; nu];
        for &c in picked {
            per_learner[c / (nn * nm)] += 1;
        }
        if per_learner.iter().all(|&c| c > 0) {
            let mut picked = picked.to_vec();
            picked.sort_unstable();
            chosen = Some(picked);
            break;
        }
    }
    let chosen = chosen.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "no cell draw left every learner observed after {SYNTH_RETRIES} tries"
        ))
    })?;

    let mut entries = BTreeMap::new();
    for flat in chosen {
        let cell = (flat / (nn * nm), (flat / nm) % nn, flat % nm);
        let mut p = ground_truth.values[flat];
        if spec.noise_sd > 0.0 {
            p = (p + spec.noise_sd * normal(&mut rng)).clamp(0.0, 1.0);
        }
        let v = if spec.continuous {
            p
        } else if rng.random::<f64>() < p {
            1.0
        } else {
            0.0
        };
        entries.insert(cell, v);
    }
    Ok((SparseTensor::new(index, entries)?, ground_truth))
}
