//! Write-once artifacts with provenance.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    /// File name only, so artifacts do not depend on where inputs live.
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Ok(Self { name, sha256: sha256_hex(&bytes) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// SHA-256 of the resolved config as compact JSON.
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig, inputs: &[&Path]) -> anyhow::Result<Self> {
        let canonical = serde_json::to_string(config)?;
        Ok(Self {
            tool: "pragcap",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config_hash: sha256_hex(canonical.as_bytes()),
            seed: config.seed,
            inputs: inputs.iter().map(|p| InputDigest::of(p)).collect::<anyhow::Result<_>>()?,
            config: config.clone(),
        })
    }
}

/// Output sink that refuses to replace existing files unless forced.
#[derive(Debug, Clone, Copy)]
pub struct Sink {
    pub force: bool,
}

impl Sink {
    pub fn write(&self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        let mut opts = OpenOptions::new();
        opts.write(true);
        if self.force {
            opts.create(true).truncate(true);
        } else {
            opts.create_new(true);
        }
        let mut f = opts.open(path).with_context(|| {
            if path.exists() && !self.force {
                format!("{} already exists (outputs are write-once; pass --force to replace)", path.display())
            } else {
                format!("creating {}", path.display())
            }
        })?;
        f.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    /// Writes `bytes` and a `<path>.provenance.json` sidecar holding
    /// `provenance` and `extra`.
    pub fn write_with_sidecar(
        &self,
        path: &Path,
        bytes: &[u8],
        provenance: &Provenance,
        extra: serde_json::Value,
    ) -> anyhow::Result<()> {
        self.write(path, bytes)?;
        let sidecar = sidecar_path(path);
        self.write_json(&sidecar, &serde_json::json!({ "provenance": provenance, "details": extra }))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".provenance.json");
    PathBuf::from(name)
}
