//! Run manifests: a JSON record of what a command saw and produced.
//!
//! The manifest pins the resolved configuration and content digests of all
//! inputs and outputs. Wall-clock fields are informational; byte-level
//! determinism guarantees cover the artifacts themselves, never the
//! manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file =
        File::open(path).with_context(|| format!("digesting {}", path.display()))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)
        .with_context(|| format!("digesting {}", path.display()))?;
    Ok(format!("{:x}", hasher.finalize()))
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Resolved configuration, every value echoed.
    pub config: BTreeMap<String, String>,
    /// File name to sha256 of every input read.
    pub inputs: BTreeMap<String, String>,
    /// File name to sha256 of every artifact written.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
    #[serde(skip)]
    started: Instant,
}

impl RunManifest {
    pub fn begin(command: &str, config: BTreeMap<String, String>) -> Self {
        RunManifest {
            tool: "ur3",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            elapsed_seconds: 0.0,
            started: Instant::now(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(file_key(path), sha256_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(file_key(path), sha256_file(path)?);
        Ok(())
    }

    /// Writes `{command}.manifest.json` under `dir` and returns its path.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.elapsed_seconds = self.started.elapsed().as_secs_f64();
        let path = dir.join(format!("{}.manifest.json", self.command));
        let body = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, body + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
