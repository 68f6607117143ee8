//! Run directory: artifacts, manifest and the timestamped sidecar log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use stylematch::data::sha256_hex;

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub artifacts: Vec<Artifact>,
}

pub struct RunDir {
    root: PathBuf,
    command: &'static str,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    pub fn create(root: &Path, command: &'static str) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating run directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), command, artifacts: Vec::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact { path: rel.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    /// Writes `manifest.json` and appends a timestamped line to `run.log`.
    pub fn finish(mut self) -> Result<()> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest { command: self.command, artifacts: std::mem::take(&mut self.artifacts) };
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        let p = self.path("manifest.json");
        fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;

        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let log = self.path("run.log");
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .with_context(|| format!("opening {}", log.display()))?;
        writeln!(f, "{secs} {} ok {} artifacts", self.command, manifest.artifacts.len())
            .with_context(|| format!("writing {}", log.display()))?;
        Ok(())
    }
}
