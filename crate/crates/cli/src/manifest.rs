//! Run manifest: config snapshot, produced files with SHA-256 digests, timings.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub pipeline: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub files: Vec<FileEntry>,
    pub timings: Vec<Timing>,
    /// Per-seed summaries, in seed order.
    pub summaries: Vec<serde_json::Value>,
}

impl RunManifest {
    /// Recomputes every digest; returns the paths that are missing or differ.
    pub fn verify(&self, root: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| match fs::read(root.join(&f.path)) {
                Ok(bytes) => sha256_hex(&bytes) != f.sha256,
                Err(_) => true,
            })
            .map(|f| f.path.clone())
            .collect()
    }

    pub fn digest_of(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == path).map(|f| f.sha256.as_str())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes files under a run directory and records them for the manifest.
pub struct OutputSink {
    root: PathBuf,
    prefix: String,
    files: Vec<FileEntry>,
    timings: Vec<Timing>,
}

impl OutputSink {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutputSink {
            root: root.to_path_buf(),
            prefix: String::new(),
            files: Vec::new(),
            timings: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Subsequent files go to `<root>/<dir>/`.
    pub fn set_subdir(&mut self, dir: &str) -> Result<()> {
        fs::create_dir_all(self.root.join(dir)).with_context(|| format!("creating {dir}"))?;
        self.prefix = format!("{dir}/");
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let rel = format!("{}{name}", self.prefix);
        let path = self.root.join(&rel);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileEntry {
            path: rel,
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Renders with `render` into memory, then writes.
    pub fn write_with<F>(&mut self, name: &str, render: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        render(&mut buf).with_context(|| format!("rendering {name}"))?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Runs `stage`, recording its wall-clock time under the current prefix.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f(self);
        self.timings.push(Timing {
            stage: format!("{}{stage}", self.prefix),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn finish(self) -> (Vec<FileEntry>, Vec<Timing>) {
        (self.files, self.timings)
    }
}
