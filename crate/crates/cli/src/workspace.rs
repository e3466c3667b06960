//! Run directories: one per invocation, never silently overwritten once complete.

use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::record::{config_sha256, RUN_RECORD};
use crate::CliError;

pub const WORKSPACE_ENV: &str = "MGAN_WORKSPACE";
const DEFAULT_ROOT: &str = "mgan-workspace";
/// Written first; marks a directory as created by this tool.
const MARKER: &str = ".mgan-run";

pub fn workspace_root(cfg: &ExperimentConfig) -> PathBuf {
    cfg.paths
        .workspace
        .clone()
        .or_else(|| std::env::var_os(WORKSPACE_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT))
}

/// `<command>-<first 12 hex digits of the config hash>`.
pub fn default_run_id(command: &str, cfg: &ExperimentConfig) -> String {
    format!("{command}-{}", &config_sha256(cfg)[..12])
}

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates (or reclaims) the run directory.
    ///
    /// A completed run (one holding `run.json`) is only replaced with `force`.
    /// An interrupted run of this tool is reclaimed silently. A non-empty
    /// directory this tool did not create is never touched.
    pub fn prepare(command: &str, cfg: &ExperimentConfig, out: Option<&Path>, force: bool) -> Result<Self, CliError> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => workspace_root(cfg).join(default_run_id(command, cfg)),
        };
        if path.exists() {
            if !path.is_dir() {
                return Err(CliError::input(format!("{} exists and is not a directory", path.display())));
            }
            let non_empty = std::fs::read_dir(&path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
                .next()
                .is_some();
            if non_empty {
                if !path.join(MARKER).exists() {
                    return Err(CliError::input(format!(
                        "{} is not empty and was not created by mgan; choose another --out",
                        path.display()
                    )));
                }
                if path.join(RUN_RECORD).exists() && !force {
                    return Err(CliError::input(format!(
                        "{} already holds a completed run; use a new --out or pass --force",
                        path.display()
                    )));
                }
                std::fs::remove_dir_all(&path)
                    .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            }
        }
        let unwritable = |e: std::io::Error| CliError::config(format!("workspace {} is not writable: {e}", path.display()));
        std::fs::create_dir_all(&path).map_err(unwritable)?;
        std::fs::write(path.join(MARKER), b"").map_err(unwritable)?;
        Ok(RunDir { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.path.join(rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completed_runs_need_force() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        let cfg = ExperimentConfig::default();
        let ws = RunDir::prepare("phantom", &cfg, Some(&out), false).unwrap();
        std::fs::write(ws.join("artifact.txt"), "x").unwrap();
        // interrupted: no run.json yet, so it is reclaimed
        RunDir::prepare("phantom", &cfg, Some(&out), false).unwrap();
        assert!(!out.join("artifact.txt").exists());

        std::fs::write(out.join(RUN_RECORD), "{}").unwrap();
        let err = RunDir::prepare("phantom", &cfg, Some(&out), false).unwrap_err();
        assert_eq!(err.code, crate::EXIT_INPUT);
        assert!(out.join(RUN_RECORD).exists());
        RunDir::prepare("phantom", &cfg, Some(&out), true).unwrap();
        assert!(!out.join(RUN_RECORD).exists());
    }

    #[test]
    fn foreign_directories_are_left_alone() {
        let tmp = tempfile::tempdir().unwrap();
        std::fs::write(tmp.path().join("mine.txt"), "keep").unwrap();
        let err = RunDir::prepare("phantom", &ExperimentConfig::default(), Some(tmp.path()), true).unwrap_err();
        assert_eq!(err.code, crate::EXIT_INPUT);
        assert!(tmp.path().join("mine.txt").exists());
    }

    #[test]
    fn run_id_tracks_config() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.override_seed(7);
        assert_ne!(default_run_id("train", &a), default_run_id("train", &b));
        assert_eq!(default_run_id("train", &a), default_run_id("train", &a.clone()));
    }
}
