//! Strict TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mgan_core::detection::EvalConfig;
use mgan_core::losses::LossConfig;
use mgan_core::phantom::PhantomConfig;
use mgan_core::protocol::{Arm, ProtocolConfig};
use mgan_core::trainer::TrainConfig;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub patients: usize,
    pub slices_per_patient: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            patients: 50,
            slices_per_patient: 4,
        }
    }
}

/// Input locations; relative paths resolve against the config file's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root for run directories; falls back to `MGAN_WORKSPACE`, then `./mgan-workspace`.
    pub workspace: Option<PathBuf>,
    /// Real corpus manifest. `experiment` generates a phantom corpus when absent.
    pub manifest: Option<PathBuf>,
    /// Generator checkpoint for `synth`.
    pub checkpoint: Option<PathBuf>,
    /// Synthetic corpus for `quality`.
    pub synthetic_manifest: Option<PathBuf>,
    /// Detector training and test corpora for `detect`.
    pub detector_train_manifest: Option<PathBuf>,
    pub detector_test_manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Which group of the two-fold split `train` fits (1 or 2).
    pub fold: usize,
    /// Side-by-side figures written per fold by `experiment`.
    pub figures_per_fold: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            fold: 1,
            figures_per_fold: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub split_seed: u64,
    pub arms: Vec<Arm>,
    pub phantom: PhantomConfig,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub detector: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            split_seed: 0,
            arms: Arm::ALL.to_vec(),
            phantom: PhantomConfig::default(),
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            detector: TrainConfig::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates; relative input paths become relative to the file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| e.prefixed(&path.display().to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.workspace,
            &mut p.manifest,
            &mut p.checkpoint,
            &mut p.synthetic_manifest,
            &mut p.detector_train_manifest,
            &mut p.detector_test_manifest,
        ] {
            if let Some(rel) = slot.as_ref().filter(|p| p.is_relative()) {
                *slot = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: mgan_core::Error| CliError::config(e.to_string());
        self.phantom.validate().map_err(wrap)?;
        self.protocol().validate().map_err(wrap)?;
        if self.corpus.patients < 2 || self.corpus.slices_per_patient < 1 {
            return Err(CliError::config(
                "corpus needs at least 2 patients and 1 slice per patient".into(),
            ));
        }
        if !(1..=2).contains(&self.output.fold) {
            return Err(CliError::config(format!("output.fold must be 1 or 2, got {}", self.output.fold)));
        }
        Ok(())
    }

    /// Sets every seed to `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.split_seed = seed;
        self.phantom.seed = seed;
        self.train.seed = seed;
        self.detector.seed = seed;
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            split_seed: self.split_seed,
            arms: self.arms.clone(),
            train: self.train.clone(),
            detector: self.detector.clone(),
            loss: self.loss.clone(),
            eval: self.eval.clone(),
        }
    }
}
