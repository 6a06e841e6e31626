use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run; the only field that varies between identical
/// runs is `wall_time_seconds`.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub inputs: Vec<InputRecord>,
    pub seed: Option<u64>,
    pub n_draws: Option<usize>,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    pub seed: Option<u64>,
    pub n_draws: Option<usize>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
            n_draws: None,
        }
    }

    /// Reads an input file, recording its digest.
    pub fn read(&mut self, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn write(&mut self, path: &Path, contents: &[u8]) -> CliResult<()> {
        write_file(path, contents)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    /// Writes the manifest next to `anchor` as `<anchor>.manifest.json`.
    pub fn finish(mut self, anchor: &Path) -> CliResult<PathBuf> {
        let path = with_suffix(anchor, ".manifest.json");
        self.outputs.push(path.display().to_string());
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            inputs: self.inputs,
            seed: self.seed,
            n_draws: self.n_draws,
            outputs: self.outputs,
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Input(format!("cannot serialize manifest: {e}")))?;
        write_file(&path, json.as_bytes())?;
        Ok(path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
