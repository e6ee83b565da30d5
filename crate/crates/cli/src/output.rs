//! Deterministic run outputs: CSV tables, JSON reports, and a manifest
//! tying every file to the configuration that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SCHEMA_VERSION};

/// Collects files for one run directory and writes the manifest last.
pub struct OutputWriter {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputWriter {
    /// Creates `<root>/<subcommand>` and starts an empty file list.
    pub fn new(root: &Path, subcommand: &str) -> Result<Self> {
        let dir = root.join(subcommand);
        fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(OutputWriter {
            dir,
            files: Vec::new(),
        })
    }

    fn record(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    /// Writes a pretty-printed JSON report.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.record(name, &bytes)
    }

    /// Writes an RFC 4180 CSV file: CRLF line endings, quoted when needed.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.record(name, &bytes)
    }

    /// Writes `manifest.json` describing the run; call once, last.
    pub fn finish(mut self, subcommand: &str, cfg: &RunConfig) -> Result<PathBuf> {
        let cfg_value = serde_json::to_value(cfg)?;
        let cfg_hash = sha256_hex(&serde_json::to_vec(&cfg_value)?);
        self.files.sort();
        let outputs: Vec<Value> = self
            .files
            .iter()
            .map(|(name, hash)| json!({ "file": name, "sha256": hash }))
            .collect();
        let manifest = json!({
            "schema": SCHEMA_VERSION,
            "subcommand": subcommand,
            "crate_version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.run.seed,
            "config_sha256": cfg_hash,
            "config": cfg_value,
            "outputs": outputs,
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, &bytes)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(self.dir)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Shortest round-trip decimal form of an f64 (`Display`), used so CSV
/// reruns are byte-identical.
pub fn num(x: f64) -> String {
    format!("{x}")
}
