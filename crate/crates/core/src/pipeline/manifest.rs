use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Config;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Digest of the package name and version.
pub fn code_version() -> String {
    let id = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
    hex::encode(Sha256::digest(id.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
    /// Artifact paths relative to the run directory.
    pub outputs: Vec<String>,
    /// Command-specific summary values.
    pub summary: BTreeMap<String, serde_json::Value>,
}

/// An append-only run directory `runs/<timestamp>-<command>/`.
#[derive(Debug)]
pub struct Run {
    dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    /// Creates a fresh directory; a numeric suffix is added when the name is taken.
    pub fn create(cfg: &Config, command: &str, seeds: Vec<u64>) -> Result<Self> {
        let started = Utc::now();
        let stem = format!("{}-{command}", started.format("%Y%m%dT%H%M%S"));
        std::fs::create_dir_all(&cfg.runs_dir).map_err(|e| Error::io(&cfg.runs_dir, e))?;
        let mut dir = cfg.runs_dir.join(&stem);
        let mut k = 1;
        loop {
            match std::fs::create_dir(&dir) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    dir = cfg.runs_dir.join(format!("{stem}-{k}"));
                    k += 1;
                }
                Err(e) => return Err(Error::io(&dir, e)),
            }
        }
        Ok(Self {
            dir,
            manifest: Manifest {
                command: command.to_string(),
                config: cfg.clone(),
                seeds,
                code_version: code_version(),
                started,
                finished: None,
                outputs: Vec::new(),
                summary: BTreeMap::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a new artifact; existing files are never overwritten.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut file = std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        std::io::Write::write_all(&mut file, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    /// Records an artifact written by other code.
    pub fn register(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_string());
    }

    pub fn summarize(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("summary value serializes");
        self.manifest.summary.insert(key.to_string(), v);
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Checks that every listed artifact exists, then writes the manifest.
    pub fn finish(mut self) -> Result<(PathBuf, Manifest)> {
        for name in &self.manifest.outputs {
            let p = self.dir.join(name);
            if !p.exists() {
                return Err(Error::Config(format!("artifact {} is missing", p.display())));
            }
        }
        self.manifest.finished = Some(Utc::now());
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok((self.dir, self.manifest))
    }
}

/// Parses a manifest file's text.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
}
