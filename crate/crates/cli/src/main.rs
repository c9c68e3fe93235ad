use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use densitron_cli::config::QuestionSelector;
use densitron_cli::stages::{self, Run};
use densitron_cli::{CliError, CliResult, PipelineConfig};
use densitron_core::Provenance;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "densitron", version, about = "Densify sparse learner logs and simulate learning curves")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel stages
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Question position, question id, or `mean`
    #[arg(long, global = true)]
    question: Option<String>,
    /// Only print warnings and errors
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the configured synthetic fixture as a CSV log
    Synth {
        #[arg(long)]
        dest: PathBuf,
    },
    /// Read the CSV log into tensor.json
    Ingest {
        /// CSV log (overrides the config)
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Factorize tensor.json into model.json
    Densify,
    /// Cross-validate the latent dimension into kselect.csv
    SelectK,
    /// Fit power-law curves on one question slice into params.csv
    Fit,
    /// Cluster the fitted curves into clusters.json
    Cluster,
    /// Simulate learners of one cluster, one batch file per size
    Simulate {
        #[arg(long, value_parser = parse_engine)]
        engine: Provenance,
        /// Single size instead of the configured sweep sizes
        #[arg(long)]
        size: Option<usize>,
    },
    /// Compare simulated batches with the originals
    Evaluate,
    /// Run every stage
    Pipeline {
        /// Generate the configured synthetic fixture as input
        #[arg(long)]
        synth: bool,
    },
}

fn parse_engine(s: &str) -> Result<Provenance, String> {
    s.parse().map_err(|e: densitron_core::Error| e.to_string())
}

fn load(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(q) = &common.question {
        cfg.question = QuestionSelector::parse(q);
    }
    Ok(cfg)
}

fn print<T: Serialize>(quiet: bool, value: &T) {
    if !quiet {
        println!("{}", serde_json::to_string(value).expect("serializable summary"));
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load(&cli.common)?;
    if let Cmd::Ingest { input: Some(p) } = &cli.cmd {
        cfg.input = Some(p.clone());
    }
    if let Some(j) = cli.common.jobs {
        if j == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let quiet = cli.common.quiet;
    let mut run = Run::new(cfg)?;
    match cli.cmd {
        Cmd::Synth { dest } => {
            let n = stages::cmd_synth(&run, &dest)?;
            print(quiet, &serde_json::json!({ "written": dest, "observations": n }));
        }
        Cmd::Ingest { .. } => print(quiet, &stages::cmd_ingest(&run)?),
        Cmd::SelectK => {
            let r = stages::cmd_select_k(&run)?;
            print(quiet, &serde_json::json!({ "chosen_k": r.chosen_k }));
        }
        Cmd::Densify => {
            let m = stages::cmd_densify(&run)?;
            print(quiet, &serde_json::json!({ "k": m.k() }));
        }
        Cmd::Fit => {
            let p = stages::cmd_fit(&run)?;
            print(quiet, &serde_json::json!({ "curves": p.len() }));
        }
        Cmd::Cluster => {
            let c = stages::cmd_cluster(&run)?;
            print(quiet, &serde_json::json!({ "k": c.k, "sizes": c.model.sizes() }));
        }
        Cmd::Simulate { engine, size } => {
            let sizes = size.map_or_else(|| run.cfg.sweep.sizes.clone(), |s| vec![s]);
            print(quiet, &stages::cmd_simulate(&run, engine, &sizes)?);
        }
        Cmd::Evaluate => {
            let engines = run.cfg.simulate.engines.clone();
            let r = stages::cmd_evaluate(&run, &engines)?;
            print(quiet, &serde_json::json!({ "rows": r.per_size.len() }));
        }
        Cmd::Pipeline { synth } => {
            let r = stages::cmd_pipeline(&mut run, synth)?;
            let failed = r.per_size.iter().filter(|s| !s.is_ok()).count();
            print(quiet, &serde_json::json!({ "rows": r.per_size.len(), "failed": failed, "out": run.out }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
