//! Run manifests: the resolved configuration of a run plus a hash of every
//! file it read or wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl FileEntry {
    pub fn hash(path: &Path, recorded_as: PathBuf) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        let digest = Sha256::digest(&data);
        Ok(Self {
            path: recorded_as,
            bytes: data.len() as u64,
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        })
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub threads: usize,
    /// Outcome of the `--verify` checks, absent when they were not requested.
    pub verification: Option<Value>,
    pub inputs: Vec<FileEntry>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<FileEntry>,
}

/// Collects artifacts as a command writes them.
pub struct Run {
    out: PathBuf,
    command: &'static str,
    config: Value,
    threads: usize,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    pub verification: Option<Value>,
}

impl Run {
    pub fn start(out: &Path, command: &'static str, config: &impl Serialize, threads: usize) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            out: out.to_owned(),
            command,
            config: serde_json::to_value(config)?,
            threads,
            inputs: Vec::new(),
            artifacts: Vec::new(),
            verification: None,
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_owned());
    }

    /// Absolute location of an artifact; registers it for hashing.
    pub fn artifact(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let name = name.as_ref().to_owned();
        let full = self.out.join(&name);
        self.artifacts.push(name);
        full
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.artifact(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn finish(self) -> Result<Manifest> {
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for p in &self.inputs {
            inputs.push(FileEntry::hash(p, p.clone())?);
        }
        let mut artifacts = Vec::with_capacity(self.artifacts.len());
        for name in &self.artifacts {
            artifacts.push(FileEntry::hash(&self.out.join(name), name.clone())?);
        }
        let manifest = Manifest {
            tool: "hvalign",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.config,
            threads: self.threads,
            verification: self.verification,
            inputs,
            artifacts,
        };
        let path = self.out.join(FILE_NAME);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}
