//! Run manifests: what a command read, wrote and was configured with.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use coherence_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub config: Option<FileDigest>,
    pub threads: usize,
    pub seeds: BTreeMap<String, u64>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Digest of a file, or of a directory as the sorted list of its files' relative paths and digests.
pub fn sha256_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return sha256_file(path);
    }
    let mut entries = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::io(path, io::Error::other(e.to_string())))?;
        if entry.file_type().is_file() {
            let rel = entry.path().strip_prefix(path).unwrap_or(entry.path());
            entries.push(format!("{}\t{}\n", rel.display(), sha256_file(entry.path())?));
        }
    }
    Ok(hex::encode(Sha256::digest(entries.concat().as_bytes())))
}

impl RunManifest {
    pub fn new(command: Vec<String>, threads: usize) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: None,
            threads,
            seeds: BTreeMap::new(),
            parameters: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
        }
    }

    pub fn digest(path: &Path) -> Result<FileDigest> {
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_path(path)?,
        })
    }

    /// Records an input and returns its digest.
    pub fn input(&mut self, path: &Path) -> Result<String> {
        let d = Self::digest(path)?;
        let hash = d.sha256.clone();
        self.inputs.push(d);
        Ok(hash)
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let d = Self::digest(path)?;
        self.outputs.push(d);
        Ok(())
    }

    pub fn parameters(&mut self, value: impl Serialize) {
        self.parameters = serde_json::to_value(value).expect("parameters serialize");
    }

    /// Writes the manifest through a temporary file in the same directory.
    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished_unix_ms = now_ms();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        tmp.write_all(json.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))?;
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
        Ok(())
    }
}

/// `<out>.manifest.json` next to a file output, `manifest.json` inside a directory output.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        return out.join("manifest.json");
    }
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
