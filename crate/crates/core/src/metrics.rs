//! MAE and PSNR between synthetic and real PET, on the 8-bit display scale.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PairedStudy};
use crate::grid::ImageGrid;
use crate::{Error, Result};

/// Peak display intensity.
pub const DISPLAY_MAX: f64 = 255.0;

fn check_dims(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Contract(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean absolute difference of two `[0, 1]` value slices, in display units.
pub fn mae_values(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 * DISPLAY_MAX - y as f64 * DISPLAY_MAX).abs())
        .sum();
    sum / a.len() as f64
}

/// Mean squared difference in display units.
pub fn mse_values(a: &[f32], b: &[f32]) -> f64 {
    assert_eq!(a.len(), b.len());
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 * DISPLAY_MAX - y as f64 * DISPLAY_MAX).powi(2))
        .sum();
    sum / a.len() as f64
}

/// `10 log10(255^2 / mse)`; `f64::INFINITY` when the images are identical.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (DISPLAY_MAX * DISPLAY_MAX / mse).log10()
    }
}

pub fn mae(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_dims(a, b)?;
    Ok(mae_values(a.values(), b.values()))
}

/// PSNR in dB. Identical images give `f64::INFINITY`, which reports keep out of their means.
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_dims(a, b)?;
    Ok(psnr_from_mse(mse_values(a.values(), b.values())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageQuality {
    pub patient_id: String,
    pub slice_index: u32,
    pub mae: f64,
    /// `None` stands for an infinite PSNR (zero error).
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub images: Vec<ImageQuality>,
    pub count: usize,
    pub mean_mae: f64,
    /// Mean over the finite PSNR values; `None` if there are none.
    pub mean_psnr: Option<f64>,
    pub psnr_infinite_count: usize,
}

impl QualityReport {
    pub fn from_images(images: Vec<ImageQuality>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Precondition("quality report needs at least one image".into()));
        }
        let count = images.len();
        let mean_mae = images.iter().map(|q| q.mae).sum::<f64>() / count as f64;
        let finite: Vec<f64> = images.iter().filter_map(|q| q.psnr).collect();
        let mean_psnr = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        Ok(QualityReport {
            psnr_infinite_count: count - finite.len(),
            images,
            count,
            mean_mae,
            mean_psnr,
        })
    }

    /// Pools several reports (for example the two folds) image by image.
    pub fn merge(parts: &[&QualityReport]) -> Result<Self> {
        Self::from_images(parts.iter().flat_map(|r| r.images.iter().cloned()).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn image_quality(synth: &PairedStudy, real: &PairedStudy) -> Result<ImageQuality> {
    let (a, b) = (synth.pet.grid(), real.pet.grid());
    check_dims(a, b).map_err(|e| e.context(format!("study ({}, {})", real.patient_id, real.slice_index)))?;
    let psnr = psnr_from_mse(mse_values(a.values(), b.values()));
    Ok(ImageQuality {
        patient_id: real.patient_id.clone(),
        slice_index: real.slice_index,
        mae: mae_values(a.values(), b.values()),
        psnr: psnr.is_finite().then_some(psnr),
    })
}

/// Pairs studies one-to-one by `(patient_id, slice_index)` and scores each pair.
pub fn quality_report_studies(synth: &[PairedStudy], real: &[PairedStudy]) -> Result<QualityReport> {
    let mut by_key: BTreeMap<(&str, u32), &PairedStudy> = BTreeMap::new();
    for s in synth {
        if by_key.insert(s.key(), s).is_some() {
            return Err(Error::Validation(format!(
                "duplicate synthetic study ({}, {})",
                s.patient_id, s.slice_index
            )));
        }
    }
    let mut images = Vec::with_capacity(real.len());
    for r in real {
        let s = by_key.remove(&r.key()).ok_or_else(|| {
            Error::Validation(format!(
                "real study ({}, {}) has no synthetic counterpart",
                r.patient_id, r.slice_index
            ))
        })?;
        images.push(image_quality(s, r)?);
    }
    if let Some(((pid, slice), _)) = by_key.into_iter().next() {
        return Err(Error::Validation(format!(
            "synthetic study ({pid}, {slice}) has no real counterpart"
        )));
    }
    QualityReport::from_images(images)
}

pub fn quality_report(synth: &Dataset, real: &Dataset) -> Result<QualityReport> {
    quality_report_studies(synth.studies(), real.studies())
}

/// Aligned text table with one row per method.
pub fn format_quality_table(rows: &[(String, &QualityReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>10}  {:>6}", "Method", "MAE", "PSNR (dB)", "Images");
    for (name, r) in rows {
        let psnr = r.mean_psnr.map_or("inf".to_string(), |p| format!("{p:.2}"));
        let _ = writeln!(out, "{:<width$}  {:>8.2}  {:>10}  {:>6}", name, r.mean_mae, psnr, r.count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(vals: &[f32], side: usize) -> ImageGrid {
        ImageGrid::unit(side, side, vals.to_vec()).unwrap()
    }

    #[test]
    fn one_level_difference_is_one() {
        // 2x2 images are below the grid minimum, so use the slice form
        assert!((mae_values(&[0.0; 4], &[1.0 / 255.0; 4]) - 1.0).abs() < 1e-6);
        let a = grid(&[0.0; 64], 8);
        let b = grid(&[1.0 / 255.0; 64], 8);
        assert!((mae(&a, &b).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn psnr_of_mse_four() {
        assert!((psnr_from_mse(4.0) - 42.1102).abs() < 1e-4);
        let a = grid(&[0.5; 64], 8);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(mae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let a = grid(&[0.0; 64], 8);
        let b = grid(&[0.0; 256], 16);
        assert!(mae(&a, &b).is_err());
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn report_excludes_infinite_psnr_from_mean() {
        let images = vec![
            ImageQuality {
                patient_id: "a".into(),
                slice_index: 0,
                mae: 1.0,
                psnr: Some(30.0),
            },
            ImageQuality {
                patient_id: "a".into(),
                slice_index: 1,
                mae: 0.0,
                psnr: None,
            },
        ];
        let r = QualityReport::from_images(images).unwrap();
        assert_eq!(r.count, 2);
        assert_eq!(r.mean_mae, 0.5);
        assert_eq!(r.mean_psnr, Some(30.0));
        assert_eq!(r.psnr_infinite_count, 1);
        let table = format_quality_table(&[("M-GAN".into(), &r)]);
        assert!(table.contains("M-GAN") && table.contains("30.00"));
    }
}
