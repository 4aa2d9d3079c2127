use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// The only field that differs between identical runs.
    pub wall_clock_ms: f64,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Writes files into one output directory and keeps their inventory.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
    started: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("{}: {e}", dir.display())))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let bytes = bytes.as_ref();
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        self.files.push(OutputFile {
            file: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn finish<C: Serialize>(self, command: &str, seed: Option<u64>, config: &C) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: version(),
            seed,
            config: serde_json::to_value(config).map_err(|e| CliError::config(e.to_string()))?,
            wall_clock_ms: self.started.elapsed().as_secs_f64() * 1000.0,
            outputs: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::config(e.to_string()))?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n").map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
