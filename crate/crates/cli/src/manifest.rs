use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{runtime, CliError};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one command invocation, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(Self {
            command: command.to_string(),
            args: std::env::args().collect(),
            config: serde_json::to_value(config).map_err(runtime)?,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: now(),
            finished: String::new(),
            outputs: Vec::new(),
        })
    }

    pub fn finish(mut self, dir: &Path, outputs: Vec<PathBuf>) -> Result<PathBuf, CliError> {
        self.finished = now();
        self.outputs = outputs;
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(runtime)?;
        std::fs::write(&path, text).map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }
}
