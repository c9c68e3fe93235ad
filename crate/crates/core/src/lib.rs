//! Densification and generative augmentation of sparse learner-performance data.
//!
//! Performance logs become a learners × questions × attempts tensor, which is
//! completed by low-rank factorization. Power-law learning curves fitted to a
//! question slice are clustered into learning patterns, each pattern is
//! augmented by a simulator (GAN, LLM prompt, or bootstrap), and simulated
//! curve parameters are compared against the originals.

pub mod batch;
pub mod error;
pub mod eval;
pub mod factor;
pub mod gan;
pub mod matrix;
pub mod patterns;
pub mod prompt;
pub mod seed;
pub mod tensor;

pub use batch::{Provenance, SimulationBatch};
pub use error::{Error, Result};
pub use eval::{ks_statistic, sweep, tail_fraction, EvalReport, ParamSample, SampleSource};
pub use factor::{complete, select_k, split_holdout, train_sgd, FactorModel, KSelectionReport, Link, TrainConfig};
pub use gan::{build_gan, generate, train_gan, GanConfig, GanModel};
pub use matrix::Matrix;
pub use prompt::{bootstrap_simulate, build_prompt, parse_response, simulate_llm, PromptContext, PromptDocument, Transport};
pub use tensor::{ingest_csv, synth_generate, DenseTensor, SparseTensor, SynthSpec, TensorIndex};
