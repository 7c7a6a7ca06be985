use crate::error::Result;
use crate::io::{sha256_file, write_json};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the manifest's directory for outputs; as given for inputs.
    pub path: String,
    pub sha256: String,
}

/// Provenance of one command run. Timestamps are the only fields that
/// differ between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
    pub runtime_secs: f64,
}

pub fn digests(paths: &[PathBuf], relative_to: Option<&Path>) -> Result<Vec<FileDigest>> {
    let mut out: Vec<FileDigest> = paths
        .iter()
        .map(|p| {
            let shown = relative_to.and_then(|base| p.strip_prefix(base).ok()).unwrap_or(p);
            Ok(FileDigest { path: shown.display().to_string(), sha256: sha256_file(p)? })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    started: chrono::DateTime<chrono::Utc>,
    clock: std::time::Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str, config: serde_json::Value) -> Self {
        Self { command: command.to_owned(), config, started: chrono::Utc::now(), clock: std::time::Instant::now() }
    }

    pub fn finish(self, out_dir: &Path, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<RunManifest> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            command: self.command,
            config: self.config,
            inputs: digests(inputs, None)?,
            outputs: digests(outputs, Some(out_dir))?,
            started_at: self.started.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            runtime_secs: self.clock.elapsed().as_secs_f64(),
        };
        write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}
