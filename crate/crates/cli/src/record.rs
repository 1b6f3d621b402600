use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance of one command invocation, written as `run.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    /// Git-style SHA-256 of the dataset manifest bytes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    pub seeds: Vec<u64>,
    pub wall_clock_seconds: f64,
    /// Files written by the command, relative to the output directory.
    pub artifacts: Vec<String>,
}

pub const RUN_FILE: &str = "run.json";

/// SHA-256 over `blob <len>\0<bytes>`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest_hash(dataset: &Path) -> Result<String> {
    let path = adaseg::data::manifest_path(dataset);
    let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(content_hash(&bytes))
}

/// Collects artifacts while a command runs.
pub struct Recorder {
    command: String,
    out: PathBuf,
    started: Instant,
    artifacts: Vec<String>,
}

impl Recorder {
    pub fn new(command: &str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Recorder {
            command: command.into(),
            out: out.to_path_buf(),
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    /// Registers `rel` (a file, or a directory whose files are listed) and returns its path.
    pub fn artifact(&mut self, rel: &str) -> PathBuf {
        self.artifacts.push(rel.to_string());
        self.out.join(rel)
    }

    pub fn finish(mut self, config: serde_json::Value, dataset_hash: Option<String>, seeds: Vec<u64>) -> Result<RunRecord> {
        let mut files = Vec::new();
        for rel in &self.artifacts {
            let p = self.out.join(rel);
            if p.is_dir() {
                list_files(&p, rel, &mut files)?;
            } else {
                files.push(rel.clone());
            }
        }
        files.sort();
        files.push(RUN_FILE.into());
        self.artifacts = files;
        let record = RunRecord {
            command: self.command,
            argv: std::env::args().collect(),
            config,
            dataset_hash,
            seeds,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            artifacts: self.artifacts,
        };
        let path = self.out.join(RUN_FILE);
        let mut text = serde_json::to_string_pretty(&record)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(record)
    }
}

fn list_files(dir: &Path, rel: &str, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let child = format!("{rel}/{name}");
        if entry.file_type()?.is_dir() {
            list_files(&entry.path(), &child, out)?;
        } else {
            out.push(child);
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn git_style_hash() {
        // `git hash-object --object-format=sha256` of an empty file
        assert_eq!(
            content_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }
}
