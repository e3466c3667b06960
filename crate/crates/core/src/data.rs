//! Paired studies, datasets, and the JSON manifest that indexes them on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{CtImage, ImageKind, LabelMap, PetImage, DEFAULT_CT_WINDOW};
use crate::imageio::{read_image, save_image};
use crate::{Error, Result};

/// One aligned (label, CT, PET) slice of one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedStudy {
    pub patient_id: String,
    pub slice_index: u32,
    pub label: LabelMap,
    pub ct: CtImage,
    pub pet: PetImage,
}

impl PairedStudy {
    pub fn new(
        patient_id: impl Into<String>,
        slice_index: u32,
        label: LabelMap,
        ct: CtImage,
        pet: PetImage,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        if patient_id.is_empty() {
            return Err(Error::Validation("patient_id must not be empty".into()));
        }
        let dims = label.grid().dims();
        if ct.grid().dims() != dims || pet.grid().dims() != dims {
            return Err(Error::Validation(format!(
                "study ({patient_id}, {slice_index}): label {:?}, ct {:?} and pet {:?} differ in shape",
                dims,
                ct.grid().dims(),
                pet.grid().dims()
            )));
        }
        Ok(PairedStudy {
            patient_id,
            slice_index,
            label,
            ct,
            pet,
        })
    }

    pub fn key(&self) -> (&str, u32) {
        (&self.patient_id, self.slice_index)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.label.grid().dims()
    }
}

/// Studies in lexicographic (patient_id, slice_index) order, keys unique.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    studies: Vec<PairedStudy>,
    manifest_path: PathBuf,
}

impl Dataset {
    pub fn new(mut studies: Vec<PairedStudy>, manifest_path: impl Into<PathBuf>) -> Result<Self> {
        studies.sort_by(|a, b| a.key().cmp(&b.key()));
        for pair in studies.windows(2) {
            if pair[0].key() == pair[1].key() {
                return Err(Error::Validation(format!(
                    "duplicate study ({}, {})",
                    pair[0].patient_id, pair[0].slice_index
                )));
            }
        }
        Ok(Dataset {
            studies,
            manifest_path: manifest_path.into(),
        })
    }

    pub fn studies(&self) -> &[PairedStudy] {
        &self.studies
    }

    pub fn into_studies(self) -> Vec<PairedStudy> {
        self.studies
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }

    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }

    pub fn patient_ids(&self) -> BTreeSet<String> {
        self.studies.iter().map(|s| s.patient_id.clone()).collect()
    }

    /// The studies whose patient is in `patients`, keeping the manifest reference.
    pub fn restrict_to(&self, patients: &BTreeSet<String>) -> Dataset {
        Dataset {
            studies: self
                .studies
                .iter()
                .filter(|s| patients.contains(&s.patient_id))
                .cloned()
                .collect(),
            manifest_path: self.manifest_path.clone(),
        }
    }
}

/// On-disk manifest record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub slice_index: u32,
    pub label: PathBuf,
    pub ct: PathBuf,
    pub pet: PathBuf,
    pub suv_scale: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub studies: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Loads and validates every study referenced by the manifest at `manifest_path`.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::read(manifest_path)?;
    let base = base_dir(manifest_path);
    let mut studies = Vec::with_capacity(manifest.studies.len());
    for entry in &manifest.studies {
        let ctx = |e: Error| {
            e.context(format!(
                "study ({}, {})",
                entry.patient_id, entry.slice_index
            ))
        };
        let label = read_image(&base.join(&entry.label), ImageKind::Label)
            .and_then(LabelMap::new)
            .map_err(ctx)?;
        let ct = read_image(&base.join(&entry.ct), ImageKind::Ct)
            .and_then(|g| CtImage::new(g, DEFAULT_CT_WINDOW))
            .map_err(ctx)?;
        let pet = read_image(&base.join(&entry.pet), ImageKind::Pet)
            .and_then(|g| PetImage::new(g, entry.suv_scale))
            .map_err(ctx)?;
        studies.push(PairedStudy::new(
            entry.patient_id.clone(),
            entry.slice_index,
            label,
            ct,
            pet,
        )?);
    }
    Dataset::new(studies, manifest_path)
}

fn file_stem_for(patient_id: &str, slice_index: u32) -> String {
    let safe: String = patient_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}_{slice_index:04}")
}

/// Writes the studies' images under `out_dir/images/` plus `out_dir/manifest.json`.
pub fn write_dataset(studies: &[PairedStudy], out_dir: &Path) -> Result<PathBuf> {
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut entries = Vec::with_capacity(studies.len());
    for s in studies {
        let stem = file_stem_for(&s.patient_id, s.slice_index);
        let rel = |kind: &str| PathBuf::from("images").join(format!("{stem}_{kind}.png"));
        let (label, ct, pet) = (rel("label"), rel("ct"), rel("pet"));
        save_image(s.label.grid(), &out_dir.join(&label))?;
        save_image(s.ct.grid(), &out_dir.join(&ct))?;
        save_image(s.pet.grid(), &out_dir.join(&pet))?;
        entries.push(ManifestEntry {
            patient_id: s.patient_id.clone(),
            slice_index: s.slice_index,
            label,
            ct,
            pet,
            suv_scale: s.pet.suv_scale(),
        });
    }
    let path = out_dir.join("manifest.json");
    Manifest { studies: entries }.write(&path)?;
    Ok(path)
}

/// Splits by patient into two folds whose patient counts differ by at most one.
pub fn split_two_fold(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut patients: Vec<String> = ds.patient_ids().into_iter().collect();
    if patients.len() < 2 {
        return Err(Error::Precondition(format!(
            "two-fold split needs at least 2 patients, found {}",
            patients.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let half = patients.len().div_ceil(2);
    let first: BTreeSet<String> = patients[..half].iter().cloned().collect();
    let second: BTreeSet<String> = patients[half..].iter().cloned().collect();
    Ok((ds.restrict_to(&first), ds.restrict_to(&second)))
}

/// Number of studies per patient, in patient order.
pub fn slices_per_patient(ds: &Dataset) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in ds.studies() {
        *counts.entry(s.patient_id.clone()).or_insert(0) += 1;
    }
    counts
}
