//! Prompt-based simulation: prompt rendering, reply parsing, chat transports,
//! chunked LLM simulation, and the offline bootstrap simulator.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batch::{Provenance, SimulationBatch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;
use crate::tensor::Difficulty;

pub const COT_HEADERS: [&str; 4] = [
    "Understanding the Existing Matrix",
    "Distribution Analysis",
    "Clustering Information",
    "Simulation Process",
];
pub const COT_SUFFIX: &str = "Let's think step by step";
pub const DEFAULT_CHUNK: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptQuestion {
    pub text: String,
    pub answer: String,
    pub difficulty: Difficulty,
}

/// Versioned prompt wording. New versions are added, old ones never edited,
/// so a logged run can always be re-rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateVersion {
    #[default]
    V1,
    V2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub reading_material: String,
    pub questions: Vec<PromptQuestion>,
    pub matrix: Matrix,
    /// One per matrix row; generated (`L1`, `L2`, …) when empty.
    #[serde(default)]
    pub row_labels: Vec<String>,
    /// One per matrix column; generated (`A1`, `A2`, …) when empty.
    #[serde(default)]
    pub column_labels: Vec<String>,
    pub format_notes: String,
    /// Number of simulated rows requested.
    pub count: usize,
    #[serde(default)]
    pub output_instructions: String,
    #[serde(default)]
    pub template: TemplateVersion,
}

impl PromptContext {
    /// Context with default notes and instructions around `matrix`.
    pub fn for_matrix(matrix: Matrix, count: usize) -> Self {
        Self {
            reading_material: String::new(),
            questions: Vec::new(),
            matrix,
            row_labels: Vec::new(),
            column_labels: Vec::new(),
            format_notes: "Each row is one learner. Column Aj is the probability that the learner answers \
                           correctly on attempt j. Entries lie in [0, 1]."
                .into(),
            count,
            output_instructions: String::new(),
            template: TemplateVersion::V1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.matrix.is_empty() || self.matrix.cols() == 0 {
            return Err(Error::EmptyContext);
        }
        if self.count == 0 {
            return Err(Error::InvalidArgument("requested row count must be at least 1".into()));
        }
        if !self.row_labels.is_empty() && self.row_labels.len() != self.matrix.rows() {
            return Err(Error::Shape(format!(
                "{} row labels for {} rows",
                self.row_labels.len(),
                self.matrix.rows()
            )));
        }
        if !self.column_labels.is_empty() && self.column_labels.len() != self.matrix.cols() {
            return Err(Error::Shape(format!(
                "{} column labels for {} columns",
                self.column_labels.len(),
                self.matrix.cols()
            )));
        }
        Ok(())
    }

    fn labels(&self) -> (Vec<String>, Vec<String>) {
        let rows = if self.row_labels.is_empty() {
            (1..=self.matrix.rows()).map(|i| format!("L{i}")).collect()
        } else {
            self.row_labels.clone()
        };
        let cols = if self.column_labels.is_empty() {
            (1..=self.matrix.cols()).map(|j| format!("A{j}")).collect()
        } else {
            self.column_labels.clone()
        };
        (rows, cols)
    }
}

/// Byte range `[start, end)` into the rendered text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sections {
    pub material: Span,
    pub questions: Span,
    pub matrix: Span,
    pub request: Span,
    pub cot: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub text: String,
    pub sections: Sections,
}

impl PromptDocument {
    pub fn section(&self, span: Span) -> &str {
        &self.text[span.start..span.end]
    }
}

/// Labeled CSV: a header row `learner,<col labels>` then one row per learner.
/// Values use the shortest representation that parses back exactly.
pub fn write_matrix(row_labels: &[String], col_labels: &[String], m: &Matrix) -> String {
    let mut s = String::from("learner");
    for c in col_labels {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for (label, row) in row_labels.iter().zip(m.iter_rows()) {
        s.push_str(label);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Inverse of [`write_matrix`].
pub fn read_matrix(text: &str) -> Result<(Vec<String>, Vec<String>, Matrix)> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::Schema("empty matrix block".into()))?;
    let cols: Vec<String> = header.split(',').skip(1).map(|c| c.trim().to_string()).collect();
    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        let mut cells = line.split(',').map(str::trim);
        labels.push(cells.next().unwrap_or_default().to_string());
        let row = cells
            .map(|c| c.parse::<f64>().map_err(|_| Error::Schema(format!("bad matrix cell {c:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != cols.len() {
            return Err(Error::Shape(format!("row of {} values under {} columns", row.len(), cols.len())));
        }
        rows.push(row);
    }
    Ok((labels, cols, Matrix::from_rows(&rows)?))
}

fn difficulty_name(d: Difficulty) -> &'static str {
    match d {
        Difficulty::E => "easy",
        Difficulty::M => "medium",
        Difficulty::H => "hard",
    }
}

fn cot_steps(version: TemplateVersion) -> [&'static str; 4] {
    match version {
        TemplateVersion::V1 => [
            "Read the matrix row by row and describe what each row and column represents.",
            "Describe how the values are distributed in each column and how they change across attempts.",
            "Identify groups of learners with similar patterns and note what distinguishes them.",
            "Generate new rows that follow the same distributions and patterns, then output them.",
        ],
        TemplateVersion::V2 => [
            "Restate the matrix dimensions, the meaning of rows and columns, and the value range.",
            "For each attempt column, estimate the mean and spread; note whether performance rises with attempts.",
            "Group learners by their trajectories (starting level and improvement) and estimate each group's share.",
            "Sample a group by its share, draw a starting level and improvement consistent with that group, \
             write the row, and repeat until the requested number of rows is reached.",
        ],
    }
}

/// Renders the prompt: material, questions, matrix block, request, then the
/// reasoning scaffold, ending with the step-by-step cue.
pub fn build_prompt(ctx: &PromptContext) -> Result<PromptDocument> {
    ctx.validate()?;
    let mut t = String::new();
    let mark = |t: &mut String, f: &dyn Fn(&mut String)| {
        let start = t.len();
        f(t);
        Span { start, end: t.len() }
    };

    let material = mark(&mut t, &|t| {
        t.push_str("## Reading Material\n\n");
        let body = ctx.reading_material.trim();
        t.push_str(if body.is_empty() { "(none provided)" } else { body });
        t.push_str("\n\n");
    });
    let questions = mark(&mut t, &|t| {
        t.push_str("## Questions\n\n");
        if ctx.questions.is_empty() {
            t.push_str("(none provided)\n");
        }
        for (i, q) in ctx.questions.iter().enumerate() {
            let _ = writeln!(t, "Q{} [{}]: {}", i + 1, difficulty_name(q.difficulty), q.text.trim());
            let _ = writeln!(t, "Answer: {}", q.answer.trim());
        }
        t.push('\n');
    });
    let (rows, cols) = ctx.labels();
    let matrix = mark(&mut t, &|t| {
        t.push_str("## Performance Matrix\n\n");
        t.push_str(ctx.format_notes.trim());
        let _ = write!(t, "\nThe matrix has {} rows and {} columns.\n\n", ctx.matrix.rows(), ctx.matrix.cols());
        t.push_str("```csv\n");
        t.push_str(&write_matrix(&rows, &cols, &ctx.matrix));
        t.push_str("```\n\n");
    });
    let request = mark(&mut t, &|t| {
        t.push_str("## Request\n\n");
        let _ = writeln!(
            t,
            "Simulate {} new learners. Each simulated row must have exactly {} comma-separated values in [0, 1], \
             one per column ({}).",
            ctx.count,
            cols.len(),
            cols.join(", ")
        );
        let extra = ctx.output_instructions.trim();
        if extra.is_empty() {
            t.push_str("Return the rows inside a single ```csv fenced block, with no header and no row labels.\n");
        } else {
            t.push_str(extra);
            t.push('\n');
        }
        t.push('\n');
    });
    let cot = mark(&mut t, &|t| {
        t.push_str("## Reasoning Steps\n\n");
        for (i, (h, body)) in COT_HEADERS.iter().zip(cot_steps(ctx.template)).enumerate() {
            let _ = writeln!(t, "Step {}: {h}", i + 1);
            let _ = writeln!(t, "{body}\n");
        }
        t.push_str(COT_SUFFIX);
    });
    Ok(PromptDocument {
        text: t,
        sections: Sections { material, questions, matrix, request, cot },
    })
}

fn fenced_blocks(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string (e.g. "csv", "json")
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        match body.find("```") {
            Some(close) => {
                out.push(&body[..close]);
                rest = &body[close + 3..];
            }
            None => break,
        }
    }
    out
}

fn valid_row(row: &[f64], width: usize) -> bool {
    row.len() == width && row.iter().all(|v| (0.0..=1.0).contains(v))
}

fn json_rows(block: &str, width: usize) -> Option<Vec<Vec<f64>>> {
    let start = block.find('[')?;
    let mut de = serde_json::Deserializer::from_str(&block[start..]).into_iter::<Vec<Vec<serde_json::Value>>>();
    let raw = de.next()?.ok()?;
    let rows: Vec<Vec<f64>> = raw
        .into_iter()
        .filter_map(|r| r.iter().map(|v| v.as_f64()).collect::<Option<Vec<f64>>>())
        .filter(|r| valid_row(r, width))
        .collect();
    (!rows.is_empty()).then_some(rows)
}

fn csv_rows(block: &str, width: usize) -> Option<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for line in block.lines() {
        let cells: Vec<&str> = line
            .split([',', ';', '\t'])
            .map(|c| c.trim().trim_matches(|ch| ch == '[' || ch == ']' || ch == '"'))
            .filter(|c| !c.is_empty())
            .collect();
        let parsed: Vec<Option<f64>> = cells.iter().map(|c| c.parse::<f64>().ok()).collect();
        // a single leading label cell is allowed
        let nums = match parsed.split_first() {
            Some((None, rest)) => rest,
            _ => &parsed[..],
        };
        if let Some(row) = nums.iter().copied().collect::<Option<Vec<f64>>>() {
            if valid_row(&row, width) {
                rows.push(row);
            }
        }
    }
    (!rows.is_empty()).then_some(rows)
}

/// Extracts the first well-formed matrix from a chat reply.
///
/// Fenced blocks are tried first, then the whole reply; within each, a JSON
/// array of arrays is preferred over CSV lines. Rows whose length differs
/// from `width` or with values outside `[0, 1]` are dropped.
pub fn parse_response(text: &str, width: usize, requested: usize) -> Result<SimulationBatch> {
    let mut candidates = fenced_blocks(text);
    candidates.push(text);
    let rows = candidates
        .iter()
        .find_map(|b| json_rows(b, width).or_else(|| csv_rows(b, width)))
        .ok_or_else(|| Error::Parse { reply: text.to_string() })?;
    let batch = SimulationBatch {
        vectors: rows,
        provenance: Provenance::Llm,
        source_meta: Default::default(),
    };
    if batch.len() < requested {
        return Err(Error::PartialResult { batch, requested });
    }
    Ok(batch)
}

/// Serializes vectors the way a well-behaved model is asked to reply.
pub fn render_reply(batch: &SimulationBatch) -> String {
    let mut s = String::from("```csv\n");
    for v in &batch.vectors {
        let cells: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s.push_str("```\n");
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

pub trait Transport {
    /// Sends one conversation and returns the assistant's reply text.
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String>;

    /// Identifies the backend in batch metadata.
    fn name(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Fail(String),
}

/// Replays scripted replies in order. Failing replies become transport
/// errors. Running past the script is a transport error too.
#[derive(Debug, Clone, Default)]
pub struct MockTransport {
    replies: Vec<MockReply>,
    next: usize,
    /// Every conversation received, in order.
    pub requests: Vec<Vec<ChatMessage>>,
}

impl MockTransport {
    pub fn scripted(replies: Vec<MockReply>) -> Self {
        Self { replies, next: 0, requests: Vec::new() }
    }

    /// Loads replies from a directory of numbered files, taken in file-name
    /// order: `<n>.txt` is a reply, `<n>.err` a failure whose text is the
    /// error message. Other files are ignored.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("txt" | "err")))
            .collect();
        files.sort();
        let replies = files
            .iter()
            .map(|p| {
                let body = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Ok(if p.extension().is_some_and(|e| e == "err") {
                    MockReply::Fail(body.trim().to_string())
                } else {
                    MockReply::Text(body)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::scripted(replies))
    }

    pub fn calls(&self) -> usize {
        self.requests.len()
    }
}

impl Transport for MockTransport {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String> {
        self.requests.push(messages.to_vec());
        let reply = self.replies.get(self.next).cloned();
        self.next += 1;
        match reply {
            Some(MockReply::Text(t)) => Ok(t),
            Some(MockReply::Fail(m)) => Err(Error::Transport(m)),
            None => Err(Error::Transport("mock script exhausted".into())),
        }
    }

    fn name(&self) -> String {
        "mock".into()
    }
}

pub const API_KEY_ENV: &str = "DENSITRON_LLM_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_tries: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: u32,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.7,
            timeout_secs: 30,
            max_tries: 3,
            backoff_base_ms: 1000,
            backoff_factor: 2,
        }
    }
}

/// Chat-completions client: `POST {base_url}/chat/completions`.
pub struct HttpTransport {
    cfg: HttpConfig,
    key: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    /// Reads the bearer token from `DENSITRON_LLM_KEY`; without it requests
    /// go out unauthenticated (useful for local endpoints).
    pub fn new(cfg: HttpConfig) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_key(cfg, key)
    }

    pub fn with_key(cfg: HttpConfig, key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, key, agent }
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, (bool, String)> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            let retryable = status == 429 || status >= 500;
            return Err((retryable, format!("HTTP {status}: {}", detail.trim())));
        }
        let v: serde_json::Value = resp.body_mut().read_json().map_err(|e| (false, e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| (false, "response has no choices[0].message.content".into()))
    }
}

impl Transport for HttpTransport {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String> {
        let body = serde_json::json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        });
        let mut delay = Duration::from_millis(self.cfg.backoff_base_ms);
        let tries = self.cfg.max_tries.max(1);
        let mut last = String::new();
        for t in 1..=tries {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, msg)) => {
                    log::warn!("chat request {t}/{tries} failed: {msg}");
                    last = msg;
                    if !retryable {
                        break;
                    }
                    if t < tries {
                        std::thread::sleep(delay);
                        delay *= self.cfg.backoff_factor;
                    }
                }
            }
        }
        Err(Error::Transport(last))
    }

    fn name(&self) -> String {
        self.cfg.model.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmRunConfig {
    /// Re-asks allowed per chunk after a failed request or unparseable reply.
    pub retries: usize,
    pub chunk_size: usize,
}

impl Default for LlmRunConfig {
    fn default() -> Self {
        Self { retries: 2, chunk_size: DEFAULT_CHUNK }
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    chunk: usize,
    attempt: usize,
    requested: usize,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    reply: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn corrective(requested: usize, width: usize) -> String {
    format!(
        "Your previous reply could not be used. Reply with exactly {requested} rows of {width} comma-separated \
         numbers between 0 and 1, inside a single ```csv fenced block, with no header and no row labels."
    )
}

/// Gathers `count` rows from `transport`, `chunk_size` rows per request.
///
/// A failed request or unparseable reply is re-asked up to `retries` times
/// per chunk, with a corrective instruction appended after a bad reply. A
/// short reply keeps its rows and the remainder is requested afresh. Rows
/// beyond `count` are dropped from the end. Every exchange is written to
/// `log` as one JSON line.
pub fn simulate_llm(
    transport: &mut dyn Transport,
    ctx: &PromptContext,
    count: usize,
    run: LlmRunConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<SimulationBatch> {
    ctx.validate()?;
    if run.chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk_size must be positive".into()));
    }
    let width = ctx.matrix.cols();
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(count);
    let (mut requests, mut retried, mut chunk) = (0usize, 0usize, 0usize);
    let mut prompt_hash = None;

    while vectors.len() < count {
        let want = run.chunk_size.min(count - vectors.len());
        let doc = build_prompt(&PromptContext { count: want, ..ctx.clone() })?;
        prompt_hash.get_or_insert_with(|| format!("{:016x}", seed::derive(0, &doc.text, &[])));
        let mut messages = vec![ChatMessage::user(doc.text)];
        let mut attempt = 0;
        loop {
            attempt += 1;
            requests += 1;
            let reply = transport.complete(&messages);
            let outcome = reply.as_ref().map_err(|e| e.to_string()).and_then(|text| match parse_response(text, width, want) {
                Ok(b) => Ok(b.vectors),
                Err(Error::PartialResult { batch, .. }) => Ok(batch.vectors),
                Err(e) => Err(e.to_string()),
            });
            if let Some(w) = log.as_deref_mut() {
                let line = LogLine {
                    chunk,
                    attempt,
                    requested: want,
                    messages: &messages,
                    reply: reply.as_deref().ok(),
                    error: outcome.as_ref().err().cloned(),
                };
                let json = serde_json::to_string(&line)?;
                writeln!(w, "{json}").map_err(|e| Error::io("<llm log>", e))?;
            }
            match outcome {
                Ok(rows) => {
                    let room = count - vectors.len();
                    vectors.extend(rows.into_iter().take(room));
                    break;
                }
                Err(msg) => {
                    if attempt > run.retries {
                        let partial = SimulationBatch {
                            vectors,
                            provenance: Provenance::Llm,
                            source_meta: Default::default(),
                        };
                        return Err(match reply {
                            Err(_) => Error::Transport(msg),
                            Ok(_) => Error::SimulationFailed { attempts: attempt, partial },
                        });
                    }
                    retried += 1;
                    if let Ok(text) = reply {
                        messages.push(ChatMessage::assistant(text));
                        messages.push(ChatMessage::user(corrective(want, width)));
                    }
                }
            }
        }
        chunk += 1;
    }
    Ok(SimulationBatch {
        vectors,
        provenance: Provenance::Llm,
        source_meta: Default::default(),
    }
    .with_meta("model", transport.name())
    .with_meta("requests", requests)
    .with_meta("retries", retried)
    .with_meta("prompt_hash", prompt_hash.unwrap_or_default()))
}

/// Bootstrap draws before adjustment: each row is `cols` values drawn with
/// replacement from the flattened original.
pub fn bootstrap_draws(original: &Matrix, count: usize, seed: u64) -> Result<Matrix> {
    if original.is_empty() || original.cols() == 0 {
        return Err(Error::EmptySample);
    }
    let pool = original.as_slice();
    let mut rng = seed::rng(seed);
    let data = (0..count * original.cols())
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect();
    Matrix::from_vec(count, original.cols(), data)
}

const MEAN_MATCH_ROUNDS: usize = 100;
const MEAN_MATCH_TOL: f64 = 1e-12;

/// Resampling simulator: [`bootstrap_draws`], then every column is shifted
/// so its mean equals the original column mean, clamped to `[0, 1]`. Shift
/// and clamp repeat until the means agree, since clamping moves them.
pub fn bootstrap_simulate(original: &Matrix, count: usize, seed: u64) -> Result<SimulationBatch> {
    let mut draws = bootstrap_draws(original, count, seed)?;
    if count > 0 {
        let targets = original.column_means();
        for (j, &target) in targets.iter().enumerate() {
            for _ in 0..MEAN_MATCH_ROUNDS {
                let mean = (0..count).map(|i| draws.get(i, j)).sum::<f64>() / count as f64;
                let shift = target - mean;
                if shift.abs() <= MEAN_MATCH_TOL {
                    break;
                }
                for i in 0..count {
                    draws.set(i, j, (draws.get(i, j) + shift).clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(SimulationBatch {
        vectors: draws.to_rows(),
        provenance: Provenance::Bootstrap,
        source_meta: Default::default(),
    }
    .with_meta("seed", seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn ctx() -> PromptContext {
        let mut c = PromptContext::for_matrix(m(&[&[0.1, 0.5, 0.9], &[0.2, 0.4, 0.6]]), 5);
        c.reading_material = "Text about recycling.".into();
        c.questions.push(PromptQuestion {
            text: "What can be recycled?".into(),
            answer: "Cans and glass.".into(),
            difficulty: Difficulty::M,
        });
        c
    }

    #[test]
    fn prompt_structure() {
        let doc = build_prompt(&ctx()).unwrap();
        assert!(doc.text.trim_end().ends_with(COT_SUFFIX));
        for h in COT_HEADERS {
            assert!(doc.section(doc.sections.cot).contains(h));
        }
        let s = &doc.sections;
        assert!(s.material.end <= s.questions.start);
        assert!(s.questions.end <= s.matrix.start && s.matrix.end <= s.request.start && s.request.end <= s.cot.start);
        assert!(doc.section(s.questions).contains("Cans and glass."));
        assert_eq!(build_prompt(&ctx()).unwrap(), doc);
    }

    #[test]
    fn matrix_block_round_trips() {
        let doc = build_prompt(&ctx()).unwrap();
        let block = fenced_blocks(doc.section(doc.sections.matrix))[0];
        let (labels, cols, mat) = read_matrix(block).unwrap();
        assert_eq!(labels, ["L1", "L2"]);
        assert_eq!(cols, ["A1", "A2", "A3"]);
        assert_eq!(mat, ctx().matrix);
    }

    #[test]
    fn empty_matrix_rejected() {
        let c = PromptContext::for_matrix(Matrix::zeros(0, 3), 1);
        assert!(matches!(build_prompt(&c), Err(Error::EmptyContext)));
    }

    #[test]
    fn templates_differ_but_share_invariants() {
        let mut c = ctx();
        let v1 = build_prompt(&c).unwrap().text;
        c.template = TemplateVersion::V2;
        let v2 = build_prompt(&c).unwrap().text;
        assert_ne!(v1, v2);
        assert!(v2.ends_with(COT_SUFFIX));
    }

    #[test]
    fn parses_fenced_csv() {
        let reply = "Here you go:\n```csv\n0.1,0.2,0.3\n0.4,0.5,0.6\n0.7,0.8,0.9\n```\nDone.";
        let b = parse_response(reply, 3, 3).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.vectors[2], vec![0.7, 0.8, 0.9]);
        assert_eq!(b.provenance, Provenance::Llm);
    }

    #[test]
    fn parses_json_and_labeled_rows() {
        let b = parse_response("Result: [[0.1, 0.2], [0.3, 1]] as requested", 2, 2).unwrap();
        assert_eq!(b.vectors, vec![vec![0.1, 0.2], vec![0.3, 1.0]]);
        let b = parse_response("learner,A1,A2\nS1, 0.5, 0.6\nS2,0.7 ,0.8\n", 2, 2).unwrap();
        assert_eq!(b.vectors, vec![vec![0.5, 0.6], vec![0.7, 0.8]]);
    }

    #[test]
    fn rejects_bad_rows() {
        let reply = "```\n0.1,0.2,0.3\n0.4,1.5,0.6\n0.7,0.8\n0.2,0.2,0.2\n```";
        let b = parse_response(reply, 3, 2).unwrap();
        assert_eq!(b.vectors, vec![vec![0.1, 0.2, 0.3], vec![0.2, 0.2, 0.2]]);
    }

    #[test]
    fn parse_errors() {
        match parse_response("I cannot do that", 3, 1) {
            Err(Error::Parse { reply }) => assert_eq!(reply, "I cannot do that"),
            other => panic!("{other:?}"),
        }
        let rows: Vec<String> = (0..10).map(|i| format!("0.{i},0.5")).collect();
        match parse_response(&rows.join("\n"), 2, 20) {
            Err(Error::PartialResult { batch, requested }) => {
                assert_eq!((batch.len(), requested), (10, 20));
            }
            other => panic!("{other:?}"),
        }
    }

    fn rows_reply(n: usize, width: usize) -> String {
        let b = SimulationBatch {
            vectors: (0..n).map(|i| vec![(i % 10) as f64 / 10.0; width]).collect(),
            provenance: Provenance::Llm,
            source_meta: Default::default(),
        };
        render_reply(&b)
    }

    #[test]
    fn chunking_with_keep_first_truncation() {
        let replies = (0..3).map(|_| MockReply::Text(rows_reply(50, 3))).collect();
        let mut t = MockTransport::scripted(replies);
        let mut log = Vec::new();
        let b = simulate_llm(&mut t, &ctx(), 120, LlmRunConfig::default(), Some(&mut log)).unwrap();
        assert_eq!(t.calls(), 3);
        assert_eq!(b.len(), 120);
        assert_eq!(b.vectors[119], vec![0.9; 3]);
        assert!(t.requests[2][0].content.contains("Simulate 20 new learners"));
        assert_eq!(String::from_utf8(log).unwrap().lines().count(), 3);
        assert_eq!(b.source_meta["retries"], "0");
    }

    #[test]
    fn retry_after_transport_failure() {
        let mut t = MockTransport::scripted(vec![MockReply::Fail("503".into()), MockReply::Text(rows_reply(5, 3))]);
        let b = simulate_llm(&mut t, &ctx(), 5, LlmRunConfig::default(), None).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.source_meta["retries"], "1");
        assert_eq!(b.source_meta["requests"], "2");
    }

    #[test]
    fn malformed_replies_exhaust_retries() {
        let mut t = MockTransport::scripted(vec![MockReply::Text("no idea".into()); 5]);
        let run = LlmRunConfig { retries: 2, chunk_size: 50 };
        match simulate_llm(&mut t, &ctx(), 10, run, None) {
            Err(Error::SimulationFailed { attempts, partial }) => {
                assert_eq!(attempts, 3);
                assert!(partial.is_empty());
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t.calls(), 3);
        assert!(t.requests[1].last().unwrap().content.contains("could not be used"));
    }

    #[test]
    fn persistent_transport_failure() {
        let mut t = MockTransport::scripted(vec![MockReply::Fail("down".into()); 3]);
        let err = simulate_llm(&mut t, &ctx(), 10, LlmRunConfig { retries: 2, chunk_size: 50 }, None).unwrap_err();
        assert!(matches!(err, Error::Transport(_)), "{err:?}");
    }

    #[test]
    fn mock_reads_numbered_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("002.txt"), rows_reply(2, 3)).unwrap();
        fs::write(dir.path().join("001.err"), "rate limited").unwrap();
        fs::write(dir.path().join("README"), "ignored").unwrap();
        let mut t = MockTransport::from_dir(dir.path()).unwrap();
        assert!(matches!(t.complete(&[]), Err(Error::Transport(m)) if m == "rate limited"));
        assert!(t.complete(&[]).unwrap().contains("```csv"));
        assert!(t.complete(&[]).is_err());
    }

    #[test]
    fn bootstrap_constant_pool() {
        let orig = m(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let b = bootstrap_simulate(&orig, 30, 1).unwrap();
        assert!(b.vectors.iter().flatten().all(|&v| v == 0.5));
        assert_eq!(b.provenance, Provenance::Bootstrap);
    }

    #[test]
    fn bootstrap_matches_column_means() {
        let orig = m(&[&[0.0, 0.2, 0.9], &[0.1, 0.6, 1.0], &[0.05, 0.3, 0.95], &[0.0, 0.9, 1.0]]);
        let b = bootstrap_simulate(&orig, 1000, 3).unwrap();
        let got = b.to_matrix().unwrap().column_means();
        for (g, w) in got.iter().zip(orig.column_means()) {
            assert!((g - w).abs() <= 0.02, "{g} vs {w}");
        }
        assert!(b.vectors.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(bootstrap_simulate(&orig, 1000, 3).unwrap(), b);
        assert!(bootstrap_simulate(&orig, 0, 3).unwrap().is_empty());
    }

    fn arb_ctx() -> impl Strategy<Value = PromptContext> {
        (1usize..6, 1usize..8, 1usize..100, any::<bool>(), "[a-zA-Z ,.]{0,40}", 0usize..3).prop_flat_map(
            |(rows, cols, count, v2, text, nq)| {
                proptest::collection::vec(0.0f64..=1.0, rows * cols).prop_map(move |data| {
                    let mut c = PromptContext::for_matrix(Matrix::from_vec(rows, cols, data).unwrap(), count);
                    c.reading_material = text.clone();
                    c.questions = (0..nq)
                        .map(|i| PromptQuestion {
                            text: format!("{text}?{i}"),
                            answer: text.clone(),
                            difficulty: Difficulty::H,
                        })
                        .collect();
                    if v2 {
                        c.template = TemplateVersion::V2;
                    }
                    c
                })
            },
        )
    }

    proptest! {
        #[test]
        fn prompt_invariants_hold(c in arb_ctx()) {
            let doc = build_prompt(&c).unwrap();
            for h in COT_HEADERS {
                prop_assert!(doc.text.contains(h));
            }
            prop_assert!(doc.text.trim_end().ends_with(COT_SUFFIX));
            let block = fenced_blocks(doc.section(doc.sections.matrix))[0];
            let (_, _, mat) = read_matrix(block).unwrap();
            prop_assert_eq!(mat, c.matrix.clone());
        }

        #[test]
        fn reply_round_trip(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 4), 1..20)) {
            let b = SimulationBatch { vectors: rows, provenance: Provenance::Llm, source_meta: Default::default() };
            let parsed = parse_response(&render_reply(&b), 4, b.len()).unwrap();
            prop_assert_eq!(parsed, b);
        }

        #[test]
        fn bootstrap_draws_come_from_pool(data in proptest::collection::vec(0.0f64..=1.0, 6), seed in any::<u64>()) {
            let orig = Matrix::from_vec(2, 3, data).unwrap();
            let draws = bootstrap_draws(&orig, 40, seed).unwrap();
            prop_assert!(draws.as_slice().iter().all(|v| orig.as_slice().contains(v)));
        }
    }
}
