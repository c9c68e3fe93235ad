//! Simulated-versus-original comparison of fitted curve parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::{Provenance, SimulationBatch};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::patterns::fit_all;
use crate::seed;

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_x − F_y|`.
///
/// Walks both sorted samples once, stepping past every copy of the smaller
/// current value before comparing the two empirical CDFs.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN in KS sample".into()));
    }
    let (xs, ys) = (sorted(x), sorted(y));
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / nx - j as f64 / ny).abs());
    }
    Ok(d)
}

/// Share of `simulated` strictly outside `[min(original), max(original)]`.
pub fn tail_fraction(original: &[f64], simulated: &[f64]) -> Result<f64> {
    if original.is_empty() {
        return Err(Error::EmptySample);
    }
    if simulated.is_empty() {
        return Ok(0.0);
    }
    let lo = original.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = original.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let out = simulated.iter().filter(|&&v| v < lo || v > hi).count();
    Ok(out as f64 / simulated.len() as f64)
}

/// Five-number summary; quartiles by linear interpolation between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub med: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Summary {
    pub fn of(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::EmptySample);
        }
        let s = sorted(x);
        Ok(Self {
            min: s[0],
            q1: quantile(&s, 0.25),
            med: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Original,
    Gan,
    Llm,
    Bootstrap,
}

impl From<Provenance> for SampleSource {
    fn from(p: Provenance) -> Self {
        match p {
            Provenance::Gan => SampleSource::Gan,
            Provenance::Llm => SampleSource::Llm,
            Provenance::Bootstrap => SampleSource::Bootstrap,
        }
    }
}

impl SampleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::Original => "original",
            SampleSource::Gan => "gan",
            SampleSource::Llm => "llm",
            SampleSource::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSample {
    pub source: SampleSource,
    pub size: usize,
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
}

impl ParamSample {
    /// Fits a power law to every row of `m`.
    pub fn fit(source: SampleSource, m: &Matrix, epsilon: f64) -> Result<Self> {
        let params = fit_all(m, epsilon)?;
        Ok(Self {
            source,
            size: params.len(),
            a_values: params.iter().map(|p| p.a).collect(),
            b_values: params.iter().map(|p| p.b).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    pub source: SampleSource,
    pub ks_a: Option<f64>,
    pub ks_b: Option<f64>,
    pub a_stats: Option<Summary>,
    pub b_stats: Option<Summary>,
    pub tail_a: Option<f64>,
    pub tail_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SizeRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub original: ParamSample,
    pub per_size: Vec<SizeRow>,
    /// Largest successful simulated sample per source, kept for the figures.
    #[serde(skip)]
    pub largest: Vec<ParamSample>,
}

/// Simulation sizes 1000, 2000, …, 20000.
pub fn default_sizes() -> Vec<usize> {
    (1..=20).map(|i| i * 1000).collect()
}

/// Fits the original slice once, then for each size draws a batch from
/// `simulator(count, seed)`, fits every simulated vector and compares the
/// parameter distributions. A failing size is recorded and skipped.
pub fn sweep<F>(
    mut simulator: F,
    source: SampleSource,
    original_slice: &Matrix,
    sizes: &[usize],
    epsilon: f64,
    seed: u64,
) -> Result<EvalReport>
where
    F: FnMut(usize, u64) -> Result<SimulationBatch>,
{
    if sizes.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one size".into()));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("sweep sizes must be strictly ascending".into()));
    }
    let original = ParamSample::fit(SampleSource::Original, original_slice, epsilon)?;
    let mut per_size = Vec::with_capacity(sizes.len());
    let mut largest = None;
    for &size in sizes {
        let task_seed = seed::derive(seed, "sweep", &[size as u64]);
        let outcome = simulator(size, task_seed).and_then(|batch| {
            if batch.is_empty() {
                return Err(Error::EmptySample);
            }
            let sim = ParamSample::fit(source, &batch.to_matrix()?, epsilon)?;
            let row = SizeRow {
                size,
                source,
                ks_a: Some(ks_statistic(&original.a_values, &sim.a_values)?),
                ks_b: Some(ks_statistic(&original.b_values, &sim.b_values)?),
                a_stats: Some(Summary::of(&sim.a_values)?),
                b_stats: Some(Summary::of(&sim.b_values)?),
                tail_a: Some(tail_fraction(&original.a_values, &sim.a_values)?),
                tail_b: Some(tail_fraction(&original.b_values, &sim.b_values)?),
                error: None,
            };
            Ok((row, sim))
        });
        match outcome {
            Ok((row, sim)) => {
                per_size.push(row);
                largest = Some(sim);
            }
            Err(e) => {
                log::warn!("sweep size {size} failed: {e}");
                per_size.push(SizeRow {
                    size,
                    source,
                    ks_a: None,
                    ks_b: None,
                    a_stats: None,
                    b_stats: None,
                    tail_a: None,
                    tail_b: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    Ok(EvalReport {
        original,
        per_size,
        largest: largest.into_iter().collect(),
    })
}

impl EvalReport {
    /// Concatenates reports for the same original sample (one per engine).
    pub fn merge(reports: Vec<EvalReport>) -> Result<EvalReport> {
        let mut it = reports.into_iter();
        let mut first = it.next().ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
        for r in it {
            if r.original != first.original {
                return Err(Error::InvalidArgument("reports have different originals".into()));
            }
            first.per_size.extend(r.per_size);
            first.largest.extend(r.largest);
        }
        Ok(first)
    }
}

pub const SUMMARY_HEADER: &str = "size,source,ks_a,ks_b,a_min,a_q1,a_med,a_q3,a_max,b_min,b_q1,b_med,b_q3,b_max,tail_a,tail_b,error";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn stats_cells(s: Option<Summary>) -> [String; 5] {
    match s {
        Some(s) => [s.min, s.q1, s.med, s.q3, s.max].map(|v| v.to_string()),
        None => Default::default(),
    }
}

pub fn summary_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in &report.per_size {
        let mut cells = vec![r.size.to_string(), r.source.as_str().to_string(), opt(r.ks_a), opt(r.ks_b)];
        cells.extend(stats_cells(r.a_stats));
        cells.extend(stats_cells(r.b_stats));
        cells.push(opt(r.tail_a));
        cells.push(opt(r.tail_b));
        cells.push(r.error.clone().unwrap_or_default().replace([',', '\n'], ";"));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub const HIST_BINS: usize = 30;
const SVG_W: f64 = 640.0;
const SVG_H: f64 = 360.0;
const MARGIN: f64 = 40.0;

fn bin_counts(values: &[f64], lo: f64, width: f64) -> Vec<usize> {
    let mut counts = vec![0; HIST_BINS];
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
        counts[b.clamp(0, HIST_BINS as isize - 1) as usize] += 1;
    }
    counts
}

/// Density histogram of `original` and `simulated` over their pooled range.
pub fn histogram_svg(title: &str, original: &[f64], simulated: &[f64]) -> String {
    let pooled = original.iter().chain(simulated);
    let lo = pooled.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = pooled.copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / HIST_BINS as f64;
    let series = [(original, "#1f77b4"), (simulated, "#ff7f0e")];
    let densities: Vec<Vec<f64>> = series
        .iter()
        .map(|(v, _)| {
            let n = v.len().max(1) as f64;
            bin_counts(v, lo, width).into_iter().map(|c| c as f64 / n).collect()
        })
        .collect();
    let peak = densities.iter().flatten().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let plot_w = SVG_W - 2.0 * MARGIN;
    let plot_h = SVG_H - 2.0 * MARGIN;
    let bar_w = plot_w / HIST_BINS as f64;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, xml_escape(title));
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="#ffffff"/>"##);
    for ((_, color), dens) in series.iter().zip(&densities) {
        let _ = writeln!(s, r#"<g fill="{color}" fill-opacity="0.5">"#);
        for (i, d) in dens.iter().enumerate() {
            let h = d / peak * plot_h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/>"#,
                MARGIN + i as f64 * bar_w,
                SVG_H - MARGIN - h,
                bar_w,
                h
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN}" y1="{y}" x2="{x2}" y2="{y}" stroke="#000000"/>"##,
        y = SVG_H - MARGIN,
        x2 = SVG_W - MARGIN
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}" font-size="12">{lo:.4}</text>"#, SVG_H - MARGIN + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{hi:.4}</text>"#,
        SVG_W - MARGIN,
        SVG_H - MARGIN + 16.0
    );
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-size="14">{}</text>"#, xml_escape(title));
    let _ = writeln!(
        s,
        r##"<text x="{}" y="24" font-size="12" text-anchor="end"><tspan fill="#1f77b4">original (n={})</tspan> <tspan fill="#ff7f0e">simulated (n={})</tspan></text>"##,
        SVG_W - MARGIN,
        original.len(),
        simulated.len()
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `report.json`, `summary.csv` and `figures/{a,b}-{source}.svg`.
/// Returns the paths written.
pub fn render(report: &EvalReport, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let figures = out_dir.join("figures");
    fs::create_dir_all(&figures).map_err(|e| Error::io(&figures, e))?;
    let mut written = Vec::new();
    let mut put = |path: std::path::PathBuf, body: &str| -> Result<()> {
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put(out_dir.join("report.json"), &(serde_json::to_string_pretty(report)? + "\n"))?;
    put(out_dir.join("summary.csv"), &summary_csv(report))?;
    for sim in &report.largest {
        let src = sim.source.as_str();
        let o = &report.original;
        put(
            figures.join(format!("a-{src}.svg")),
            &histogram_svg(&format!("Parameter a: original vs {src} (n={})", sim.size), &o.a_values, &sim.a_values),
        )?;
        put(
            figures.join(format!("b-{src}.svg")),
            &histogram_svg(&format!("Parameter b: original vs {src} (n={})", sim.size), &o.b_values, &sim.b_values),
        )?;
    }
    Ok(written)
}

/// Resamples the original rows with replacement; the null simulator.
pub fn resample_rows(original: &Matrix, count: usize, seed: u64) -> SimulationBatch {
    use rand::Rng as _;
    let mut rng = seed::rng(seed);
    let vectors = (0..count)
        .map(|_| original.row(rng.random_range(0..original.rows())).to_vec())
        .collect();
    SimulationBatch {
        vectors,
        provenance: Provenance::Bootstrap,
        source_meta: Default::default(),
    }
}
