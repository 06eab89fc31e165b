//! Provenance manifest written next to every output file.
//!
//! `config_digest` is a SHA-256 over the command name, every parameter that
//! can change output bytes, and the digests of the input files. Thread count,
//! verbosity, output paths and the timestamp are not part of it.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::failure::{CmdResult, Failure};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub parameters: Map<String, Value>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
}

pub fn file_digest(path: &Path) -> CmdResult<String> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: Option<u64>,
        parameters: Map<String, Value>,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> CmdResult<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputFile {
                    path: p.to_path_buf(),
                    sha256: file_digest(p)?,
                })
            })
            .collect::<CmdResult<Vec<_>>>()?;
        let config_digest = digest(command, seed, &parameters, &inputs);
        Ok(RunManifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_digest,
            seed,
            parameters,
            inputs,
            outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
            timestamp: now(),
        })
    }

    /// `<output>.manifest.json`
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn write_for(&self, output: &Path) -> CmdResult<PathBuf> {
        let path = Self::path_for(output);
        sftpick_core::io::write_json_pretty(&path, self)?;
        Ok(path)
    }
}

fn digest(command: &str, seed: Option<u64>, parameters: &Map<String, Value>, inputs: &[InputFile]) -> String {
    // serde_json::Map is ordered by key, so this encoding is canonical
    let payload = serde_json::json!({
        "command": command,
        "tool_version": TOOL_VERSION,
        "seed": seed,
        "parameters": parameters,
        "inputs": inputs.iter().map(|i| &i.sha256).collect::<Vec<_>>(),
    });
    hex::encode(Sha256::digest(payload.to_string().as_bytes()))
}
