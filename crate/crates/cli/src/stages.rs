//! One function per pipeline stage. Each reads its inputs from the output
//! directory, writes fixed-name artifacts there and appends a manifest line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use densitron_core::eval::{self, EvalReport, SampleSource};
use densitron_core::gan::{self, GanConfig};
use densitron_core::patterns::{self, CurveParams};
use densitron_core::prompt::{self, HttpTransport, MockTransport, PromptContext, Transport};
use densitron_core::seed;
use densitron_core::{
    complete, select_k, synth_generate, train_sgd, FactorModel, KSelectionReport, Matrix, Provenance,
    SimulationBatch, SparseTensor, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{ClusterK, PipelineConfig, QuestionSelector, TransportKind};
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, StageRecord, CONFIG_COPY};

pub const TENSOR: &str = "tensor.json";
pub const KSELECT: &str = "kselect.csv";
pub const MODEL: &str = "model.json";
pub const LOSS_TRACE: &str = "loss-trace.csv";
pub const SLICE: &str = "slice.json";
pub const PARAMS: &str = "params.csv";
pub const CLUSTERS: &str = "clusters.json";
pub const GAN_MODEL: &str = "gan-model.json";
pub const GAN_TRACE: &str = "gan-trace.csv";
pub const LLM_LOG: &str = "llm-log.jsonl";
pub const REPORT: &str = "report.json";
pub const SUMMARY: &str = "summary.csv";

pub fn batch_name(engine: Provenance, size: usize) -> String {
    format!("batch-{engine}-{size}.json")
}

/// Seed for the batch of `size` rows from `engine`.
pub fn batch_seed(master: u64, engine: Provenance, size: usize) -> u64 {
    seed::derive(master, &format!("simulate-{engine}"), &[size as u64])
}

/// Resolved configuration plus the output directory.
pub struct Run {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub seed: u64,
    config_sha: String,
}

impl Run {
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        cfg.validate()?;
        let seed = cfg.master_seed()?;
        let out = cfg.out.clone();
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let json = serde_json::to_string_pretty(&cfg).map_err(densitron_core::Error::from)? + "\n";
        let path = out.join(CONFIG_COPY);
        fs::write(&path, &json).map_err(|e| CliError::io(&path, e))?;
        Ok(Self { config_sha: sha256_hex(json.as_bytes()), cfg, out, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, stage: &'static str, name: &str) -> CliResult<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::StageDependency { stage, missing: p })
        }
    }

    fn read(&self, stage: &'static str, name: &str) -> CliResult<String> {
        let p = self.require(stage, name)?;
        fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
    }

    fn write(&self, name: &str, body: &str) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| CliError::io(&p, e))
    }

    fn record(&self, stage: &str) -> StageRecord {
        StageRecord::new(stage, self.seed, self.config_sha.clone())
    }
}

fn core<T>(r: densitron_core::Result<T>) -> CliResult<T> {
    r.map_err(CliError::from)
}

/// Writes the configured synthetic fixture as an ingestible CSV.
pub fn cmd_synth(run: &Run, dest: &Path) -> CliResult<usize> {
    let (obs, _) = core(synth_generate(&run.cfg.synth))?;
    let f = File::create(dest).map_err(|e| CliError::io(dest, e))?;
    core(obs.write_csv(BufWriter::new(f)))?;
    Ok(obs.len())
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub rows: usize,
    pub learners: usize,
    pub questions: usize,
    pub attempts: usize,
    pub observed: usize,
    pub sparsity: f64,
}

pub fn cmd_ingest(run: &Run) -> CliResult<IngestSummary> {
    let input = run
        .cfg
        .input
        .clone()
        .ok_or_else(|| CliError::Config("no input file: set `input` in the config".into()))?;
    let f = File::open(&input).map_err(|e| CliError::io(&input, e))?;
    let (t, rows) = core(densitron_core::tensor::ingest_csv_filtered(f, run.cfg.difficulty))?;
    run.write(TENSOR, &core(t.to_json())?)?;
    let (u, n, m) = t.dims();
    let summary = IngestSummary { rows, learners: u, questions: n, attempts: m, observed: t.len(), sparsity: t.sparsity() };
    let mut rec = run.record("ingest");
    rec.inputs.insert(input.display().to_string(), crate::manifest::hash_file(&input)?);
    rec.output(&run.out, TENSOR)?;
    rec.notes.insert("sparsity".into(), summary.sparsity.to_string());
    rec.append(&run.out)?;
    Ok(summary)
}

fn load_tensor(run: &Run, stage: &'static str) -> CliResult<SparseTensor> {
    core(SparseTensor::from_json(&run.read(stage, TENSOR)?))
}

pub fn cmd_select_k(run: &Run) -> CliResult<KSelectionReport> {
    let t = load_tensor(run, "select-k")?;
    let [lo, hi] = run.cfg.factor.k_range;
    let report = core(select_k(
        &t,
        lo..=hi,
        run.cfg.factor.trials,
        &run.cfg.factor.train,
        seed::derive(run.seed, "select-k", &[]),
    ))?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(|e| CliError::io(run.path(KSELECT), e))?;
    run.write(KSELECT, &String::from_utf8(buf).expect("ascii csv"))?;
    let mut rec = run.record("select-k");
    rec.input(&run.out, TENSOR)?;
    rec.output(&run.out, KSELECT)?;
    rec.notes.insert("chosen_k".into(), report.chosen_k.to_string());
    rec.append(&run.out)?;
    Ok(report)
}

pub fn cmd_densify(run: &Run) -> CliResult<FactorModel> {
    let t = load_tensor(run, "densify")?;
    let mut cfg = TrainConfig { seed: seed::derive(run.seed, "densify", &[]), ..run.cfg.factor.train.clone() };
    let mut rec = run.record("densify");
    rec.input(&run.out, TENSOR)?;
    if run.cfg.factor.use_selected_k && run.path(KSELECT).is_file() {
        let report = core(KSelectionReport::from_csv(&run.read("densify", KSELECT)?, run.cfg.factor.trials))?;
        cfg.k = report.chosen_k;
        rec.input(&run.out, KSELECT)?;
    }
    log::info!("densifying with k = {}", cfg.k);
    let (model, trace) = core(train_sgd(&t, &cfg, None))?;
    run.write(MODEL, &core(model.to_json())?)?;
    let mut csv = String::from("epoch,train_loss,train_rmse\n");
    for r in &trace {
        csv.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.train_rmse));
    }
    run.write(LOSS_TRACE, &csv)?;
    rec.output(&run.out, MODEL)?;
    rec.output(&run.out, LOSS_TRACE)?;
    rec.notes.insert("k".into(), cfg.k.to_string());
    rec.append(&run.out)?;
    Ok(model)
}

/// The question slice curves are fitted on, with its learner labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceArtifact {
    pub question: String,
    pub learners: Vec<String>,
    pub matrix: Matrix,
}

pub fn cmd_fit(run: &Run) -> CliResult<Vec<CurveParams>> {
    let t = load_tensor(run, "fit")?;
    let model = core(FactorModel::from_json(&run.read("fit", MODEL)?))?;
    let dense = core(complete(&model, &t))?;
    let index = t.index();
    let (question, matrix) = match &run.cfg.question {
        QuestionSelector::Named(s) if s == "mean" => ("mean".to_string(), dense.mean_slice()),
        QuestionSelector::Position(n) => (index.questions().get(*n).cloned().unwrap_or_default(), core(dense.slice_question(*n))?),
        QuestionSelector::Named(id) => {
            let n = index
                .question_position(id)
                .ok_or_else(|| CliError::Config(format!("question {id:?} is not in the tensor")))?;
            (id.clone(), core(dense.slice_question(n))?)
        }
    };
    let params = core(patterns::fit_all(&matrix, run.cfg.curves.epsilon))?;
    let slice = SliceArtifact { question, learners: index.learners().to_vec(), matrix };
    run.write(SLICE, &(serde_json::to_string(&slice).map_err(densitron_core::Error::from)? + "\n"))?;
    let mut buf = Vec::new();
    patterns::write_params_csv(&mut buf, &slice.learners, &params).map_err(|e| CliError::io(run.path(PARAMS), e))?;
    run.write(PARAMS, &String::from_utf8(buf).expect("utf-8 ids"))?;
    let mut rec = run.record("fit");
    rec.input(&run.out, TENSOR)?;
    rec.input(&run.out, MODEL)?;
    rec.output(&run.out, SLICE)?;
    rec.output(&run.out, PARAMS)?;
    rec.append(&run.out)?;
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub k: usize,
    /// `fixed` or `silhouette`.
    pub chosen_by: String,
    pub silhouette: Vec<(usize, f64)>,
    pub learners: Vec<String>,
    pub model: patterns::ClusterModel,
}

pub fn cmd_cluster(run: &Run) -> CliResult<ClusterArtifact> {
    let (learners, params) = core(patterns::read_params_csv(&run.read("cluster", PARAMS)?))?;
    let cseed = seed::derive(run.seed, "cluster", &[]);
    let (k, chosen_by, silhouette) = match run.cfg.cluster.k {
        ClusterK::Fixed(k) => (k, "fixed", Vec::new()),
        ClusterK::Auto(_) => {
            let points: Vec<Vec<f64>> = params.iter().map(|p| vec![p.a, p.b]).collect();
            let (scaled, _) = core(patterns::standardize(&points))?;
            let [lo, hi] = run.cfg.cluster.k_range;
            let hi = hi.min(points.len().saturating_sub(1));
            let (k, scores) = core(patterns::choose_k_silhouette(&scaled, lo, hi, cseed))?;
            (k, "silhouette", scores)
        }
    };
    let model = core(patterns::cluster_params(&params, k, cseed))?;
    let art = ClusterArtifact { k, chosen_by: chosen_by.into(), silhouette, learners, model };
    run.write(CLUSTERS, &(serde_json::to_string_pretty(&art).map_err(densitron_core::Error::from)? + "\n"))?;
    let mut rec = run.record("cluster");
    rec.input(&run.out, PARAMS)?;
    rec.output(&run.out, CLUSTERS)?;
    rec.notes.insert("k".into(), k.to_string());
    rec.append(&run.out)?;
    Ok(art)
}

/// Rows of the slice belonging to the simulated cluster.
fn cluster_rows(run: &Run, stage: &'static str) -> CliResult<(usize, Matrix)> {
    let slice: SliceArtifact =
        serde_json::from_str(&run.read(stage, SLICE)?).map_err(densitron_core::Error::from)?;
    let clusters: ClusterArtifact =
        serde_json::from_str(&run.read(stage, CLUSTERS)?).map_err(densitron_core::Error::from)?;
    if clusters.learners != slice.learners {
        return Err(CliError::Config(format!("{CLUSTERS} and {SLICE} come from different runs")));
    }
    let c = run.cfg.simulate.cluster.unwrap_or_else(|| clusters.model.largest());
    if c >= clusters.k {
        return Err(CliError::Config(format!("simulate.cluster {c} but only {} clusters", clusters.k)));
    }
    let members = clusters.model.members(c);
    Ok((c, slice.matrix.select_rows(&members)))
}

#[derive(Debug, Default, Serialize)]
pub struct SimulateSummary {
    pub cluster: usize,
    pub written: Vec<String>,
    pub failed: BTreeMap<String, String>,
}

fn make_transport(run: &Run) -> CliResult<Box<dyn Transport>> {
    let llm = &run.cfg.simulate.llm;
    Ok(match llm.transport {
        TransportKind::Http => Box::new(HttpTransport::new(llm.http.clone())),
        TransportKind::Mock => {
            let dir = llm.mock_dir.as_ref().expect("validated");
            Box::new(core(MockTransport::from_dir(dir))?)
        }
    })
}

/// Simulates every configured size for `engine` and writes one batch file
/// per size. A size that fails is reported and skipped.
pub fn cmd_simulate(run: &Run, engine: Provenance, sizes: &[usize]) -> CliResult<SimulateSummary> {
    let (cluster, original) = cluster_rows(run, "simulate")?;
    let mut rec = run.record(&format!("simulate-{engine}"));
    rec.input(&run.out, SLICE)?;
    rec.input(&run.out, CLUSTERS)?;
    let mut summary = SimulateSummary { cluster, ..Default::default() };

    let mut simulate: Box<dyn FnMut(usize, u64) -> densitron_core::Result<SimulationBatch>> = match engine {
        Provenance::Bootstrap => {
            let original = original.clone();
            Box::new(move |n, s| prompt::bootstrap_simulate(&original, n, s))
        }
        Provenance::Gan => {
            let cfg = GanConfig {
                output_dim: original.cols(),
                seed: seed::derive(run.seed, "gan", &[cluster as u64]),
                ..run.cfg.simulate.gan.clone()
            };
            let (model, trace) = core(gan::train_gan(core(gan::build_gan(&cfg))?, &original.to_rows(), &cfg))?;
            run.write(GAN_MODEL, &core(model.to_json())?)?;
            let mut buf = Vec::new();
            gan::write_trace_csv(&mut buf, &trace).map_err(|e| CliError::io(run.path(GAN_TRACE), e))?;
            run.write(GAN_TRACE, &String::from_utf8(buf).expect("ascii csv"))?;
            rec.output(&run.out, GAN_MODEL)?;
            rec.output(&run.out, GAN_TRACE)?;
            Box::new(move |n, s| Ok(gan::generate(&model, n, s)))
        }
        Provenance::Llm => {
            let llm = run.cfg.simulate.llm.clone();
            let mut ctx = PromptContext::for_matrix(original.clone(), 1);
            ctx.reading_material = llm.reading_material.clone();
            ctx.questions = llm.questions.clone();
            ctx.template = llm.template;
            let mut transport = make_transport(run)?;
            let log_path = run.path(LLM_LOG);
            let mut log = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
            Box::new(move |n, _| prompt::simulate_llm(transport.as_mut(), &ctx, n, llm.run, Some(&mut log)))
        }
    };

    for &size in sizes {
        let name = batch_name(engine, size);
        match simulate(size, batch_seed(run.seed, engine, size)) {
            Ok(batch) => {
                run.write(&name, &(serde_json::to_string(&batch).map_err(densitron_core::Error::from)? + "\n"))?;
                rec.output(&run.out, &name)?;
                summary.written.push(name);
            }
            Err(e) => {
                log::warn!("{engine} size {size} failed: {e}");
                let _ = fs::remove_file(run.path(&name));
                summary.failed.insert(name, e.to_string());
            }
        }
    }
    drop(simulate);
    if engine == Provenance::Llm {
        rec.output(&run.out, LLM_LOG)?;
    }
    for (k, v) in &summary.failed {
        rec.notes.insert(format!("failed:{k}"), v.clone());
    }
    rec.notes.insert("cluster".into(), cluster.to_string());
    rec.append(&run.out)?;
    Ok(summary)
}

/// Compares every batch on disk against the cluster's original curves and
/// renders the report. A size without a batch file becomes a failed row.
pub fn cmd_evaluate(run: &Run, engines: &[Provenance]) -> CliResult<EvalReport> {
    let (_, original) = cluster_rows(run, "evaluate")?;
    let sizes = &run.cfg.sweep.sizes;
    let mut rec = run.record("evaluate");
    rec.input(&run.out, SLICE)?;
    rec.input(&run.out, CLUSTERS)?;
    let mut reports = Vec::new();
    for &engine in engines {
        if !sizes.iter().any(|&s| run.path(&batch_name(engine, s)).is_file()) {
            return Err(CliError::StageDependency { stage: "evaluate", missing: run.path(&batch_name(engine, sizes[0])) });
        }
        let report = core(eval::sweep(
            |size, _| {
                let name = batch_name(engine, size);
                let text = fs::read_to_string(run.path(&name)).map_err(|e| densitron_core::Error::Io { path: run.path(&name), source: e })?;
                let batch: SimulationBatch = serde_json::from_str(&text)?;
                Ok(batch)
            },
            SampleSource::from(engine),
            &original,
            sizes,
            run.cfg.curves.epsilon,
            seed::derive(run.seed, "evaluate", &[]),
        ))?;
        for s in sizes {
            let name = batch_name(engine, *s);
            if run.path(&name).is_file() {
                rec.input(&run.out, &name)?;
            }
        }
        reports.push(report);
    }
    let report = core(EvalReport::merge(reports))?;
    let written = core(eval::render(&report, &run.out))?;
    for p in written {
        let rel = p.strip_prefix(&run.out).expect("rendered under out").to_string_lossy().replace('\\', "/");
        rec.output(&run.out, &rel)?;
    }
    rec.append(&run.out)?;
    Ok(report)
}

/// All stages in order; with `synth` the configured fixture is written to
/// `input.csv` in the output directory and used as input.
pub fn cmd_pipeline(run: &mut Run, synth: bool) -> CliResult<EvalReport> {
    if synth {
        let dest = run.path("input.csv");
        cmd_synth(run, &dest)?;
        run.cfg.input = Some(dest);
    }
    let s = cmd_ingest(run)?;
    log::info!("ingested {} observations, sparsity {:.4}", s.observed, s.sparsity);
    let k = cmd_select_k(run)?;
    log::info!("selected k = {}", k.chosen_k);
    cmd_densify(run)?;
    let params = cmd_fit(run)?;
    log::info!("fitted {} curves", params.len());
    let c = cmd_cluster(run)?;
    log::info!("{} clusters, sizes {:?}", c.k, c.model.sizes());
    let engines = run.cfg.simulate.engines.clone();
    let sizes = run.cfg.sweep.sizes.clone();
    for &e in &engines {
        let s = cmd_simulate(run, e, &sizes)?;
        log::info!("{e}: {} batches written, {} failed", s.written.len(), s.failed.len());
    }
    cmd_evaluate(run, &engines)
}
