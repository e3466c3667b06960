//! Two-fold experiment: GAN on one patient group, detector on the other
//! group's synthetic PET, evaluation back on the first group's real PET,
//! then the same with the groups swapped.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{encode_params, save_checkpoint, sha256_hex, ArchSpec, CheckpointMeta};
use crate::data::{split_two_fold, write_dataset, Dataset, PairedStudy};
use crate::detection::{evaluate_detector, DetectionReport, EvalConfig};
use crate::losses::LossConfig;
use crate::metrics::{quality_report_studies, QualityReport};
use crate::networks::ChannelMode;
use crate::phantom::stream_seed;
use crate::trainer::{synthesize, train_detector, train_gan_observed, EpochRecord, TrainConfig};
use crate::{Error, Result};

/// Source of the detector's training images.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "LB")]
    Label,
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "M")]
    Multi,
    #[serde(rename = "REAL")]
    Real,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Label, Arm::Ct, Arm::Multi, Arm::Real];

    pub fn channel_mode(self) -> Option<ChannelMode> {
        match self {
            Arm::Label => Some(ChannelMode::Label),
            Arm::Ct => Some(ChannelMode::Ct),
            Arm::Multi => Some(ChannelMode::Multi),
            Arm::Real => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Arm::Label => "LB",
            Arm::Ct => "CT",
            Arm::Multi => "M",
            Arm::Real => "REAL",
        }
    }

    /// Row name in the printed tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Arm::Label => "LB-GAN",
            Arm::Ct => "CT-GAN",
            Arm::Multi => "M-GAN",
            Arm::Real => "Real PET",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LB" => Ok(Arm::Label),
            "CT" => Ok(Arm::Ct),
            "M" => Ok(Arm::Multi),
            "REAL" => Ok(Arm::Real),
            _ => Err(Error::Validation(format!("unknown arm {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub split_seed: u64,
    pub arms: Vec<Arm>,
    pub train: TrainConfig,
    pub detector: TrainConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            split_seed: 0,
            arms: Arm::ALL.to_vec(),
            train: TrainConfig::default(),
            detector: TrainConfig::default(),
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() {
            return Err(Error::Validation("at least one arm is required".into()));
        }
        let unique: BTreeSet<_> = self.arms.iter().collect();
        if unique.len() != self.arms.len() {
            return Err(Error::Validation("arms must not repeat".into()));
        }
        self.train.validate()?;
        self.detector.validate()?;
        self.loss.validate()?;
        self.eval.validate()
    }

    /// Arms in canonical table order.
    pub fn ordered_arms(&self) -> Vec<Arm> {
        let set: BTreeSet<Arm> = self.arms.iter().copied().collect();
        set.into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gan,
    Detector,
}

/// Who trained on what and who was scored on what.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub model: String,
    pub kind: ModelKind,
    pub arm: Arm,
    pub fold: usize,
    pub seed: u64,
    /// Patients whose images were direct training samples.
    pub trained_on: BTreeSet<String>,
    /// Patients behind upstream models that produced the training samples.
    pub upstream: BTreeSet<String>,
    pub evaluated_on: BTreeSet<String>,
    pub params_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
}

impl From<&EpochRecord> for EpochLosses {
    fn from(r: &EpochRecord) -> Self {
        EpochLosses {
            epoch: r.epoch,
            d_loss: r.d_loss,
            g_adv: r.g_adv,
            g_l1: r.g_l1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmFold {
    pub arm: Arm,
    /// Synthetic vs real PET of the synthesized group; absent for the real arm.
    pub quality: Option<QualityReport>,
    pub detection: DetectionReport,
    pub gan_losses: Vec<EpochLosses>,
    pub detector_bce: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    /// Trains the GANs; the detectors are evaluated on its real PET.
    pub gan_group: BTreeSet<String>,
    /// Synthesized by the GANs; the detectors train on it.
    pub detector_group: BTreeSet<String>,
    pub arms: Vec<ArmFold>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub quality: Option<QualityReport>,
    pub detection: DetectionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: Vec<ArmSummary>,
    pub provenance: Vec<ModelProvenance>,
}

impl ExperimentReport {
    pub fn summary(&self, arm: Arm) -> Option<&ArmSummary> {
        self.aggregate.iter().find(|s| s.arm == arm)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A leakage finding: a model scored on patients it was trained on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Leak {
    pub model: String,
    pub patients: BTreeSet<String>,
}

/// Every model whose direct training patients intersect its evaluation patients.
pub fn audit_leakage(provenance: &[ModelProvenance]) -> Vec<Leak> {
    provenance
        .iter()
        .filter_map(|p| {
            let shared: BTreeSet<String> = p.trained_on.intersection(&p.evaluated_on).cloned().collect();
            (!shared.is_empty()).then(|| Leak {
                model: p.model.clone(),
                patients: shared,
            })
        })
        .collect()
}

/// Synthetic corpora kept for figures, keyed by fold and arm.
pub type SyntheticSets = BTreeMap<(usize, Arm), Vec<PairedStudy>>;

pub struct ProtocolOutput {
    pub report: ExperimentReport,
    pub synthetic: SyntheticSets,
}

fn pairs(studies: &[PairedStudy]) -> Vec<(crate::grid::PetImage, crate::grid::LabelMap)> {
    studies.iter().map(|s| (s.pet.clone(), s.label.clone())).collect()
}

/// Runs both directions for every configured arm.
///
/// With `out_dir`, checkpoints, loss logs and synthetic corpora are written
/// under `out_dir/fold{k}/`. `progress` receives one line per stage.
pub fn run_two_fold_protocol(
    ds: &Dataset,
    cfg: &ProtocolConfig,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<ProtocolOutput> {
    cfg.validate()?;
    let (first, second) = split_two_fold(ds, cfg.split_seed)?;
    let groups = [first, second];
    let arms = cfg.ordered_arms();
    let mut folds = Vec::new();
    let mut provenance = Vec::new();
    let mut synthetic = SyntheticSets::new();

    for fold in 1..=2 {
        let gan_set = &groups[fold - 1];
        let det_set = &groups[2 - fold];
        let gan_ids = gan_set.patient_ids();
        let det_ids = det_set.patient_ids();
        let fold_dir = out_dir.map(|d| d.join(format!("fold{fold}")));
        let test_pairs = pairs(gan_set.studies());
        let det_seed = stream_seed(cfg.detector.seed, &[b"detector", &[fold as u8]]);
        let mut arm_results = Vec::new();
        let ctx = |e: Error, what: &str| e.context(format!("fold {fold}, {what}"));

        for &arm in &arms {
            let (train_pairs, quality, gan_losses, upstream) = match arm.channel_mode() {
                Some(mode) => {
                    let seed = stream_seed(cfg.train.seed, &[b"gan", arm.tag().as_bytes(), &[fold as u8]]);
                    let tcfg = TrainConfig {
                        channel_mode: mode,
                        seed,
                        ..cfg.train.clone()
                    };
                    progress(&format!("fold {fold}: training {} on {} studies", arm.display_name(), gan_set.len()));
                    let mut on_epoch = |r: &EpochRecord| {
                        progress(&format!(
                            "fold {fold} {} epoch {}: d {:.4} adv {:.4} l1 {:.4}",
                            arm.display_name(),
                            r.epoch,
                            r.d_loss,
                            r.g_adv,
                            r.g_l1
                        ))
                    };
                    let run = train_gan_observed(gan_set.studies(), &tcfg, &cfg.loss, &mut on_epoch)
                        .map_err(|e| ctx(e, arm.display_name()))?;
                    let synth = synthesize(&run.generator, mode, det_set.studies())
                        .map_err(|e| ctx(e, arm.display_name()))?;
                    let quality = quality_report_studies(&synth, det_set.studies())?;
                    let model = format!("fold{fold}/gan_{}", arm.tag());
                    if let Some(dir) = &fold_dir {
                        let path = dir.join(format!("gan_{}.ckpt", arm.tag()));
                        let meta = CheckpointMeta::new(
                            ArchSpec::Generator {
                                mode,
                                unet: run.generator.net.spec().clone(),
                            },
                            seed,
                            tcfg.epochs,
                        );
                        save_checkpoint(&path, &run.generator, &meta)?;
                        run.log.write_csv(&dir.join(format!("gan_{}_log.csv", arm.tag())))?;
                        write_dataset(&synth, &dir.join(format!("synth_{}", arm.tag())))?;
                    }
                    provenance.push(ModelProvenance {
                        model,
                        kind: ModelKind::Gan,
                        arm,
                        fold,
                        seed,
                        trained_on: gan_ids.clone(),
                        upstream: BTreeSet::new(),
                        evaluated_on: det_ids.clone(),
                        params_sha256: sha256_hex(&encode_params(&run.generator)),
                    });
                    let losses = run.log.records.iter().map(EpochLosses::from).collect();
                    let train_pairs = pairs(&synth);
                    synthetic.insert((fold, arm), synth);
                    (train_pairs, Some(quality), losses, gan_ids.clone())
                }
                None => (pairs(det_set.studies()), None, Vec::new(), BTreeSet::new()),
            };

            progress(&format!("fold {fold}: training detector on {} images", arm.display_name()));
            let dcfg = TrainConfig {
                seed: det_seed,
                ..cfg.detector.clone()
            };
            let det = train_detector(&train_pairs, &dcfg).map_err(|e| ctx(e, "detector"))?;
            let detection = evaluate_detector(&det.detector, &test_pairs, &cfg.eval)?;
            progress(&format!(
                "fold {fold}: {} detector P {:.2} R {:.2} F {:.2}",
                arm.display_name(),
                detection.precision,
                detection.recall,
                detection.f_score
            ));
            if let Some(dir) = &fold_dir {
                let path = dir.join(format!("detector_{}.ckpt", arm.tag()));
                let meta = CheckpointMeta::new(ArchSpec::Detector { unet: det.detector.net.spec().clone() }, det_seed, dcfg.epochs);
                save_checkpoint(&path, &det.detector, &meta)?;
            }
            provenance.push(ModelProvenance {
                model: format!("fold{fold}/detector_{}", arm.tag()),
                kind: ModelKind::Detector,
                arm,
                fold,
                seed: det_seed,
                trained_on: det_ids.clone(),
                upstream,
                evaluated_on: gan_ids.clone(),
                params_sha256: sha256_hex(&encode_params(&det.detector)),
            });
            arm_results.push(ArmFold {
                arm,
                quality,
                detection,
                gan_losses,
                detector_bce: det.log.records.iter().map(|r| r.bce).collect(),
            });
        }
        folds.push(FoldReport {
            fold,
            gan_group: gan_ids,
            detector_group: det_ids,
            arms: arm_results,
        });
    }

    let aggregate = arms
        .iter()
        .map(|&arm| {
            let parts: Vec<&ArmFold> = folds
                .iter()
                .flat_map(|f| f.arms.iter().filter(move |a| a.arm == arm))
                .collect();
            let detection = DetectionReport::merge(&parts.iter().map(|p| &p.detection).collect::<Vec<_>>());
            let qualities: Vec<&QualityReport> = parts.iter().filter_map(|p| p.quality.as_ref()).collect();
            let quality = if qualities.is_empty() {
                None
            } else {
                Some(QualityReport::merge(&qualities)?)
            };
            Ok(ArmSummary {
                arm,
                quality,
                detection,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ProtocolOutput {
        report: ExperimentReport {
            folds,
            aggregate,
            provenance,
        },
        synthetic,
    })
}
