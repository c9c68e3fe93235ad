//! Stage implementations behind the `densitron` command.

pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
pub use stages::Run;
