//! Optional TOML config file. Keys mirror the long CLI flags with
//! underscores (`reward_model`, `response_strategy`, ...); a flag given on the
//! command line always wins over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::failure::{CmdResult, Failure};

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub assignments: Option<PathBuf>,
    pub assignments_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub reward_model: Option<String>,
    pub weights: Option<Weights>,
    pub metric: Option<String>,
    pub direction: Option<String>,
    pub k: Option<usize>,
    pub clusters: Option<usize>,
    pub response_strategy: Option<String>,
    pub seed: Option<u64>,
    pub lenient: Option<bool>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub batch_size: Option<usize>,
    pub max_retries: Option<u32>,
    pub timeout_s: Option<f64>,
    pub workers: Option<usize>,
    pub threads: Option<usize>,
    pub quiet: Option<bool>,
}

/// Weights may be written as `"1,1,2"` or `[1, 1, 2]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    Text(String),
    List([f64; 3]),
}

impl Weights {
    pub fn resolve(&self) -> CmdResult<sftpick_core::Weights> {
        match self {
            Weights::Text(s) => s.parse().map_err(|e: sftpick_core::Error| Failure::Usage(e.to_string())),
            Weights::List([d, s, st]) => Ok(sftpick_core::Weights::new(*d, *s, *st)),
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }
}
