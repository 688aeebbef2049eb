//! Run manifests: enough to reproduce a command. Written next to each
//! command's primary output as `<output>.manifest.json`. The wall-clock
//! field is the only part that varies between identical runs, so manifests
//! sit outside the byte-identical determinism contract that covers every
//! data output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Resolved settings the command actually ran with.
    pub settings: serde_json::Value,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_clock_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    settings: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            seed: None,
            settings: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.seed = Some(seed);
        self
    }

    pub fn settings(&mut self, settings: impl Serialize) -> &mut Self {
        self.settings = serde_json::to_value(settings).expect("serializable settings");
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("cannot read input {}", path.display()))?;
        let digest = Sha256::digest(&bytes);
        self.inputs.insert(path.display().to_string(), hex::encode(digest));
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Write `<primary>.manifest.json`.
    pub fn write(&self, primary_output: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            settings: self.settings.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            wall_clock_ms: self.started.elapsed().as_millis(),
        };
        let mut name = primary_output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = primary_output.with_file_name(name);
        let text = serde_json::to_string_pretty(&manifest).context("serialize manifest")?;
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write manifest {}", path.display()))?;
        Ok(path)
    }
}

/// Refuse to overwrite an existing output unless `--force` was given.
pub fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        anyhow::bail!(
            "output {} already exists; pass --force to overwrite",
            path.display()
        );
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("cannot create output directory {}", parent.display()))?;
        }
    }
    Ok(())
}
