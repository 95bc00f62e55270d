//! Run manifests: what a command was asked to do and what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use ifnet::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Tree hash over the inputs, see [`content_hash`].
    pub input_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

fn blob_id(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().into()
}

/// Git-style hash: one blob id per named input, then a hash over the sorted
/// `id name` lines.
pub fn content_hash(entries: &[(String, Vec<u8>)]) -> String {
    let mut lines: Vec<String> = entries
        .iter()
        .map(|(name, bytes)| format!("{} {name}\n", hex::encode(blob_id(bytes))))
        .collect();
    lines.sort();
    let mut h = Sha256::new();
    for l in &lines {
        h.update(l.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Reads `paths` and names them relative to `base`.
pub fn file_entries(base: &Path, paths: &[PathBuf]) -> Result<Vec<(String, Vec<u8>)>> {
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            Ok((relative(base, p), bytes))
        })
        .collect()
}

pub fn relative(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::Io { path: path.to_owned(), source: e })
    }
}
