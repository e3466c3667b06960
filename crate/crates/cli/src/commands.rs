//! Subcommand bodies. Each writes its artifacts into the run directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mgan_core::checkpoint::{save_checkpoint, ArchSpec, CheckpointMeta};
use mgan_core::data::{load_dataset, split_two_fold, Dataset};
use mgan_core::detection::{evaluate_detector, format_detection_table};
use mgan_core::metrics::{format_quality_table, quality_report};
use mgan_core::phantom::generate_corpus;
use mgan_core::protocol::{audit_leakage, run_two_fold_protocol, ExperimentReport};
use mgan_core::trainer::{synthesize_to_dir, train_detector, train_gan_observed, EpochRecord};

use crate::config::ExperimentConfig;
use crate::figures::write_fold_figures;
use crate::record::RunRecord;
use crate::workspace::RunDir;
use crate::{CliError, Command};

fn required<'a>(command: &str, key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    let path = value
        .as_deref()
        .ok_or_else(|| CliError::config(format!("`{command}` requires paths.{key}")))?;
    if !path.exists() {
        return Err(CliError::input(format!("paths.{key}: {} does not exist", path.display())));
    }
    Ok(path)
}

/// Fails before any work if a subcommand's inputs are unset or missing.
pub fn check_inputs(cmd: &Command, cfg: &ExperimentConfig) -> Result<(), CliError> {
    let p = &cfg.paths;
    let name = cmd.name();
    match cmd {
        Command::Phantom(_) => {}
        Command::Train(_) => {
            required(name, "manifest", &p.manifest)?;
        }
        Command::Synth(_) => {
            required(name, "checkpoint", &p.checkpoint)?;
            required(name, "manifest", &p.manifest)?;
        }
        Command::Quality(_) => {
            required(name, "synthetic_manifest", &p.synthetic_manifest)?;
            required(name, "manifest", &p.manifest)?;
        }
        Command::Detect(_) => {
            required(name, "detector_train_manifest", &p.detector_train_manifest)?;
            required(name, "detector_test_manifest", &p.detector_test_manifest)?;
        }
        Command::Experiment(_) => {
            if p.manifest.is_some() {
                required(name, "manifest", &p.manifest)?;
            }
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn load(path: &Path, rec: &mut RunRecord) -> Result<Dataset, CliError> {
    rec.add_manifest(path)?;
    Ok(load_dataset(path)?)
}

pub fn phantom(
    cfg: &ExperimentConfig,
    ws: &RunDir,
    _rec: &mut RunRecord,
    progress: &mut dyn FnMut(&str),
) -> Result<(), CliError> {
    progress(&format!(
        "generating {} patients x {} slices",
        cfg.corpus.patients, cfg.corpus.slices_per_patient
    ));
    let manifest = generate_corpus(&cfg.phantom, cfg.corpus.patients, cfg.corpus.slices_per_patient, &ws.join("corpus"))?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(
    cfg: &ExperimentConfig,
    ws: &RunDir,
    rec: &mut RunRecord,
    progress: &mut dyn FnMut(&str),
) -> Result<(), CliError> {
    let ds = load(cfg.paths.manifest.as_deref().expect("checked"), rec)?;
    let (first, second) = split_two_fold(&ds, cfg.split_seed)?;
    let group = if cfg.output.fold == 1 { first } else { second };
    let mode = cfg.train.channel_mode;
    progress(&format!(
        "training {mode} generator on fold group {} ({} studies)",
        cfg.output.fold,
        group.len()
    ));
    let mut on_epoch = |r: &EpochRecord| {
        progress(&format!(
            "epoch {}: d {:.4} adv {:.4} l1 {:.4} ({:.1}s)",
            r.epoch, r.d_loss, r.g_adv, r.g_l1, r.seconds
        ))
    };
    let run = train_gan_observed(group.studies(), &cfg.train, &cfg.loss, &mut on_epoch)?;
    let path = ws.join(format!("gan_{}.ckpt", mode.tag()));
    let meta = CheckpointMeta::new(
        ArchSpec::Generator {
            mode,
            unet: run.generator.net.spec().clone(),
        },
        cfg.train.seed,
        cfg.train.epochs,
    );
    save_checkpoint(&path, &run.generator, &meta)?;
    save_checkpoint(
        &ws.join(format!("disc_{}.ckpt", mode.tag())),
        &run.discriminator,
        &CheckpointMeta::new(ArchSpec::Discriminator(run.discriminator.spec().clone()), cfg.train.seed, cfg.train.epochs),
    )?;
    run.log.write_csv(&ws.join(format!("gan_{}_log.csv", mode.tag())))?;
    write_json(&ws.join("trained_on.json"), &group.patient_ids())?;
    println!("{}", path.display());
    Ok(())
}

pub fn synth(
    cfg: &ExperimentConfig,
    ws: &RunDir,
    rec: &mut RunRecord,
    progress: &mut dyn FnMut(&str),
) -> Result<(), CliError> {
    let checkpoint = cfg.paths.checkpoint.as_deref().expect("checked");
    let manifest = cfg.paths.manifest.as_deref().expect("checked");
    rec.add_checkpoint(checkpoint)?;
    rec.add_manifest(manifest)?;
    progress(&format!("synthesizing {} PET from {}", cfg.train.channel_mode, manifest.display()));
    let out = synthesize_to_dir(checkpoint, cfg.train.channel_mode, manifest, &ws.join("synthetic"))?;
    println!("{}", out.display());
    Ok(())
}

pub fn quality(
    cfg: &ExperimentConfig,
    ws: &RunDir,
    rec: &mut RunRecord,
    _progress: &mut dyn FnMut(&str),
) -> Result<(), CliError> {
    let synth = load(cfg.paths.synthetic_manifest.as_deref().expect("checked"), rec)?;
    let real = load(cfg.paths.manifest.as_deref().expect("checked"), rec)?;
    let report = quality_report(&synth, &real)?;
    let table = format_quality_table(&[("Synthetic".to_string(), &report)]);
    write_json(&ws.join("quality.json"), &report)?;
    write_text(&ws.join("quality.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn detect(
    cfg: &ExperimentConfig,
    ws: &RunDir,
    rec: &mut RunRecord,
    progress: &mut dyn FnMut(&str),
) -> Result<(), CliError> {
    let train_set = load(cfg.paths.detector_train_manifest.as_deref().expect("checked"), rec)?;
    let test_set = load(cfg.paths.detector_test_manifest.as_deref().expect("checked"), rec)?;
    let shared: BTreeSet<String> = train_set
        .patient_ids()
        .intersection(&test_set.patient_ids())
        .cloned()
        .collect();
    if !shared.is_empty() {
        return Err(CliError::input(format!(
            "detector train and test corpora share patients: {}",
            shared.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let pairs = |ds: &Dataset| ds.studies().iter().map(|s| (s.pet.clone(), s.label.clone())).collect::<Vec<_>>();
    progress(&format!("training detector on {} images", train_set.len()));
    let run = train_detector(&pairs(&train_set), &cfg.detector)?;
    let meta = CheckpointMeta::new(
        ArchSpec::Detector {
            unet: run.detector.net.spec().clone(),
        },
        cfg.detector.seed,
        cfg.detector.epochs,
    );
    save_checkpoint(&ws.join("detector.ckpt"), &run.detector, &meta)?;
    let report = evaluate_detector(&run.detector, &pairs(&test_set), &cfg.eval)?;
    let table = format_detection_table(&[("Detector".to_string(), &report)]);
    write_json(&ws.join("detection.json"), &report)?;
    write_text(&ws.join("detection.txt"), &table)?;
    print!("{table}");
    Ok(())
}

/// Table-1-style rows (GAN arms only) and Table-2-style rows (every arm), in arm order.
pub fn tables(report: &ExperimentReport) -> (String, String) {
    let quality: Vec<(String, _)> = report
        .aggregate
        .iter()
        .filter_map(|s| s.quality.as_ref().map(|q| (s.arm.display_name().to_string(), q)))
        .collect();
    let detection: Vec<(String, _)> = report
        .aggregate
        .iter()
        .map(|s| (s.arm.display_name().to_string(), &s.detection))
        .collect();
    let t1 = if quality.is_empty() {
        "no GAN arms configured\n".to_string()
    } else {
        format_quality_table(&quality)
    };
    (t1, format_detection_table(&detection))
}

pub fn experiment(
    cfg: &ExperimentConfig,
    ws: &RunDir,
    rec: &mut RunRecord,
    progress: &mut dyn FnMut(&str),
) -> Result<(), CliError> {
    let manifest = match cfg.paths.manifest.as_deref() {
        Some(p) => p.to_path_buf(),
        None => {
            progress(&format!(
                "generating phantom corpus: {} patients x {} slices",
                cfg.corpus.patients, cfg.corpus.slices_per_patient
            ));
            generate_corpus(&cfg.phantom, cfg.corpus.patients, cfg.corpus.slices_per_patient, &ws.join("corpus"))?
        }
    };
    let ds = load(&manifest, rec)?;
    let out = run_two_fold_protocol(&ds, &cfg.protocol(), Some(ws.path()), progress)?;
    let report = &out.report;

    let leaks = audit_leakage(&report.provenance);
    let leak_list: Vec<_> = leaks
        .iter()
        .map(|l| serde_json::json!({ "model": l.model, "patients": l.patients }))
        .collect();
    write_json(
        &ws.join("leakage.json"),
        &serde_json::json!({ "models_audited": report.provenance.len(), "leaks": leak_list }),
    )?;
    if !leaks.is_empty() {
        return Err(CliError::internal(format!(
            "leakage audit failed for {} model(s); see leakage.json",
            leaks.len()
        )));
    }

    write_json(&ws.join("report.json"), report)?;
    let (t1, t2) = tables(report);
    write_text(&ws.join("table1.txt"), &t1)?;
    write_text(&ws.join("table2.txt"), &t2)?;
    if cfg.output.figures_per_fold > 0 {
        for fold in &report.folds {
            let real = ds.restrict_to(&fold.detector_group);
            write_fold_figures(
                &ws.join("figures"),
                fold.fold,
                real.studies(),
                &out.synthetic,
                cfg.output.figures_per_fold,
            )?;
        }
    }
    println!("Synthesis quality\n{t1}\nDetection\n{t2}");
    Ok(())
}
