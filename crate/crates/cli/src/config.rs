use std::fs;
use std::path::{Path, PathBuf};

use densitron_core::gan::GanConfig;
use densitron_core::prompt::{HttpConfig, LlmRunConfig, PromptQuestion, TemplateVersion};
use densitron_core::tensor::Difficulty;
use densitron_core::{Provenance, SynthSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Question slice to fit curves on: a position, a question id, or `"mean"`
/// to average the slices of all questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QuestionSelector {
    Position(usize),
    Named(String),
}

impl Default for QuestionSelector {
    fn default() -> Self {
        QuestionSelector::Position(0)
    }
}

impl QuestionSelector {
    pub fn parse(s: &str) -> Self {
        s.parse().map_or_else(|_| QuestionSelector::Named(s.to_string()), QuestionSelector::Position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClusterK {
    Fixed(usize),
    /// `"auto"`: silhouette choice over `k_range`.
    Auto(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorSection {
    pub train: TrainConfig,
    pub k_range: [usize; 2],
    pub trials: usize,
    /// Use the k chosen by `select-k` when `kselect.csv` exists.
    pub use_selected_k: bool,
}

impl Default for FactorSection {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            k_range: [1, 20],
            trials: 5,
            use_selected_k: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub epsilon: f64,
}

impl Default for CurveSection {
    fn default() -> Self {
        Self { epsilon: densitron_core::patterns::DEFAULT_EPSILON }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    pub k: ClusterK,
    pub k_range: [usize; 2],
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self { k: ClusterK::Auto("auto".into()), k_range: [2, 6] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub transport: TransportKind,
    /// Directory of numbered reply files for the mock transport.
    pub mock_dir: Option<PathBuf>,
    pub http: HttpConfig,
    pub run: LlmRunConfig,
    pub template: TemplateVersion,
    pub reading_material: String,
    pub questions: Vec<PromptQuestion>,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            transport: TransportKind::Http,
            mock_dir: None,
            http: HttpConfig::default(),
            run: LlmRunConfig::default(),
            template: TemplateVersion::V1,
            reading_material: String::new(),
            questions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub engines: Vec<Provenance>,
    /// Cluster whose learners are simulated; the largest when unset.
    pub cluster: Option<usize>,
    /// `output_dim` and `seed` are set at run time.
    pub gan: GanConfig,
    pub llm: LlmSection,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            engines: vec![Provenance::Gan, Provenance::Bootstrap],
            cluster: None,
            gan: GanConfig::default(),
            llm: LlmSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sizes: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { sizes: densitron_core::eval::default_sizes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub difficulty: Option<Difficulty>,
    pub question: QuestionSelector,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub factor: FactorSection,
    pub curves: CurveSection,
    pub cluster: ClusterSection,
    pub simulate: SimulateSection,
    pub sweep: SweepSection,
    /// Fixture used by `synth` and `pipeline --synth`.
    pub synth: SynthSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            difficulty: None,
            question: QuestionSelector::default(),
            seed: None,
            out: PathBuf::from("out"),
            factor: FactorSection::default(),
            curves: CurveSection::default(),
            cluster: ClusterSection::default(),
            simulate: SimulateSection::default(),
            sweep: SweepSection::default(),
            synth: SynthSpec::new((50, 10, 8), 3, 0.8, 7),
        }
    }
}

impl PipelineConfig {
    /// Loads TOML or JSON by extension (`.json` is JSON, anything else TOML).
    /// Relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.input.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.simulate.llm.mock_dir.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn master_seed(&self) -> CliResult<u64> {
        self.seed
            .ok_or_else(|| CliError::Config("no master seed: set `seed` in the config or pass --seed".into()))
    }

    /// Checks everything that can be checked before any stage runs.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.master_seed()?;
        self.factor.train.validate().map_err(|e| CliError::Config(format!("factor.train: {e}")))?;
        let [klo, khi] = self.factor.k_range;
        if klo == 0 || khi < klo {
            return bad(format!("factor.k_range [{klo}, {khi}] is not a valid range"));
        }
        if self.factor.trials == 0 {
            return bad("factor.trials must be at least 1".into());
        }
        if !(self.curves.epsilon > 0.0) {
            return bad("curves.epsilon must be positive".into());
        }
        match &self.cluster.k {
            ClusterK::Fixed(0) => return bad("cluster.k must be at least 1".into()),
            ClusterK::Auto(s) if s != "auto" => return bad(format!("cluster.k must be an integer or \"auto\", got {s:?}")),
            _ => {}
        }
        let [clo, chi] = self.cluster.k_range;
        if clo < 2 || chi < clo {
            return bad(format!("cluster.k_range [{clo}, {chi}] must start at 2 or more"));
        }
        if self.simulate.engines.is_empty() {
            return bad("simulate.engines is empty".into());
        }
        let gan = GanConfig { output_dim: 1, ..self.simulate.gan.clone() };
        gan.validate().map_err(|e| CliError::Config(format!("simulate.gan: {e}")))?;
        if self.simulate.engines.contains(&Provenance::Llm)
            && self.simulate.llm.transport == TransportKind::Mock
            && self.simulate.llm.mock_dir.is_none()
        {
            return bad("simulate.llm.mock_dir is required for the mock transport".into());
        }
        let sizes = &self.sweep.sizes;
        if sizes.is_empty() || sizes.contains(&0) || sizes.windows(2).any(|w| w[1] <= w[0]) {
            return bad("sweep.sizes must be non-empty, positive and strictly ascending".into());
        }
        self.synth.validate().map_err(|e| CliError::Config(format!("synth: {e}")))?;
        Ok(())
    }
}
