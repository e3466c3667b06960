//! `run.json`: what a run read, how it was configured, and digests of what it wrote.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mgan_core::checkpoint::{file_sha256, sha256_hex, sidecar_path};
use mgan_core::data::Manifest;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const RUN_RECORD: &str = "run.json";

/// Wall-clock loss logs; excluded from output digests so reruns compare equal.
const TIMING_SUFFIX: &str = "_log.csv";

pub fn config_sha256(cfg: &ExperimentConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub phantom: u64,
    pub train: u64,
    pub detector: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    /// For manifests: digest over every referenced image, in manifest order.
    pub content_sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub code_version: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seeds: Seeds,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<OutputDigest>,
    /// Inputs created inside the run directory are recorded relative to it.
    #[serde(skip)]
    root: PathBuf,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", path.display()))
}

fn files_under(root: &Path, rel: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let dir = root.join(rel);
    let mut entries: Vec<_> = std::fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(&dir, e))?;
    entries.sort();
    for name in entries {
        let child = rel.join(&name);
        if root.join(&child).is_dir() {
            files_under(root, &child, out)?;
        } else {
            out.push(child);
        }
    }
    Ok(())
}

impl RunRecord {
    pub fn new(command: &str, cfg: &ExperimentConfig, root: &Path) -> Self {
        RunRecord {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_sha256(cfg),
            config: cfg.clone(),
            seeds: Seeds {
                split: cfg.split_seed,
                phantom: cfg.phantom.seed,
                train: cfg.train.seed,
                detector: cfg.detector.seed,
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
            root: root.to_path_buf(),
        }
    }

    fn shown(&self, path: &Path) -> PathBuf {
        path.strip_prefix(&self.root).unwrap_or(path).to_path_buf()
    }

    pub fn add_manifest(&mut self, path: &Path) -> Result<(), CliError> {
        let manifest = Manifest::read(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut joined = String::new();
        for s in &manifest.studies {
            for img in [&s.label, &s.ct, &s.pet] {
                joined.push_str(&file_sha256(&base.join(img))?);
            }
        }
        self.inputs.push(InputDigest {
            path: self.shown(path),
            sha256: file_sha256(path)?,
            content_sha256: Some(sha256_hex(joined.as_bytes())),
        });
        Ok(())
    }

    /// A checkpoint and its metadata sidecar.
    pub fn add_checkpoint(&mut self, path: &Path) -> Result<(), CliError> {
        let sidecar = sidecar_path(path);
        let joined = format!("{}{}", file_sha256(path)?, file_sha256(&sidecar)?);
        self.inputs.push(InputDigest {
            path: self.shown(path),
            sha256: file_sha256(path)?,
            content_sha256: Some(sha256_hex(joined.as_bytes())),
        });
        Ok(())
    }

    /// Digests every file in `dir` and writes `run.json` last, marking the run complete.
    pub fn finish(mut self, dir: &Path) -> Result<(), CliError> {
        let mut files = Vec::new();
        files_under(dir, Path::new(""), &mut files)?;
        for rel in files {
            let name = rel.to_string_lossy();
            if name.starts_with('.') || name == RUN_RECORD || name.ends_with(TIMING_SUFFIX) {
                continue;
            }
            self.outputs.push(OutputDigest {
                sha256: file_sha256(&dir.join(&rel))?,
                path: rel,
            });
        }
        let path = dir.join(RUN_RECORD);
        let mut text = serde_json::to_string_pretty(&self).expect("run record serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }
}
