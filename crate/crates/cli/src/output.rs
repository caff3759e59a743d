//! Output directory handling: atomic writes, input digests and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    argv: &'a [String],
    config: &'a serde_json::Value,
    seeds: &'a BTreeMap<String, u64>,
    inputs: &'a [InputDigest],
    outputs: &'a [String],
    exit_status: i32,
    warnings: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    started_unix: u64,
    finished_unix: u64,
}

/// Collects everything a subcommand reads and writes, for the manifest.
pub struct Run {
    pub subcommand: &'static str,
    out_dir: PathBuf,
    argv: Vec<String>,
    started: u64,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    pub warnings: Vec<String>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Run {
    pub fn new(subcommand: &'static str, out_dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Run {
            subcommand,
            out_dir: out_dir.to_path_buf(),
            argv: std::env::args().collect(),
            started: unix_now(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Reads an input file whole and records its digest.
    pub fn read_input(&mut self, path: &Path) -> anyhow::Result<Vec<u8>> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{message}");
        self.warnings.push(message);
    }

    /// Writes `name` in the output directory through a temp file and rename.
    pub fn write_output(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.out_dir.join(name), bytes)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> anyhow::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_output(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_output(name, &bytes)
    }

    pub fn exit_status(&self) -> i32 {
        i32::from(!self.warnings.is_empty())
    }

    /// Writes `<subcommand>.manifest.json` and returns the exit status.
    pub fn finish(self, error: Option<&anyhow::Error>) -> anyhow::Result<i32> {
        let status = if error.is_some() {
            2
        } else {
            self.exit_status()
        };
        let error = error.map(|e| format!("{e:#}"));
        let manifest = Manifest {
            tool: "routerprint",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            argv: &self.argv,
            config: &self.config,
            seeds: &self.seeds,
            inputs: &self.inputs,
            outputs: &self.outputs,
            exit_status: status,
            warnings: &self.warnings,
            error,
            started_unix: self.started,
            finished_unix: unix_now(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(
            &self
                .out_dir
                .join(format!("{}.manifest.json", self.subcommand)),
            &bytes,
        )?;
        Ok(status)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
