use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST: &str = "manifest.jsonl";
pub const CONFIG_COPY: &str = "config.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// One line of `manifest.jsonl`: what a stage read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub version: String,
    pub master_seed: u64,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

impl StageRecord {
    pub fn new(stage: &str, master_seed: u64, config_sha256: String) -> Self {
        Self {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            config_sha256,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, out: &Path, name: &str) -> CliResult<()> {
        self.inputs.insert(name.to_string(), hash_file(&out.join(name))?);
        Ok(())
    }

    pub fn output(&mut self, out: &Path, name: &str) -> CliResult<()> {
        self.outputs.insert(name.to_string(), hash_file(&out.join(name))?);
        Ok(())
    }

    pub fn append(&self, out: &Path) -> CliResult<()> {
        let path = out.join(MANIFEST);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        let line = serde_json::to_string(self).map_err(densitron_core::Error::from)?;
        writeln!(f, "{line}").map_err(|e| CliError::io(&path, e))
    }
}

pub fn read_manifest(out: &Path) -> CliResult<Vec<StageRecord>> {
    let path = out.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Core(e.into())))
        .collect()
}
