use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    /// False for files that legitimately differ between runs (wall-clock timings).
    pub reproducible: bool,
}

/// Everything needed to rerun a subcommand and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    /// Effective settings after merging config files and flags.
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<FileRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub outputs: Vec<FileRecord>,
    /// Digest over the hashes of every reproducible output, in listing order.
    pub artifact_hash: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn record(path: &Path, reproducible: bool) -> Result<FileRecord> {
    Ok(FileRecord { path: path.to_path_buf(), sha256: sha256_file(path)?, reproducible })
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            config,
            seed,
            inputs: Vec::new(),
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            artifact_hash: String::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(record(path, true)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(record(path, true)?);
        Ok(())
    }

    pub fn volatile_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(record(path, false)?);
        Ok(())
    }

    /// Seals the artifact hash and writes the manifest to `path`.
    pub fn write(mut self, path: &Path) -> Result<PathBuf> {
        let mut h = Sha256::new();
        for o in self.outputs.iter().filter(|o| o.reproducible) {
            h.update(o.sha256.as_bytes());
        }
        self.artifact_hash = format!("{:x}", h.finalize());
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path.to_path_buf())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
