//! Side-by-side comparison strips: label | CT | real PET | LB-GAN | CT-GAN | M-GAN.

use std::path::{Path, PathBuf};

use mgan_core::data::PairedStudy;
use mgan_core::grid::ImageGrid;
use mgan_core::imageio::save_preview;
use mgan_core::protocol::{Arm, SyntheticSets};

use crate::CliError;

pub const PANEL_ARMS: [Arm; 3] = [Arm::Label, Arm::Ct, Arm::Multi];
const GAP: usize = 2;
const GAP_SHADE: u8 = 255;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major 8-bit pixels of one strip. Arms that were not run leave a black panel.
pub fn comparison_strip(real: &PairedStudy, synthetic: [Option<&PairedStudy>; 3]) -> (usize, usize, Vec<u8>) {
    let (h, w) = real.dims();
    let mut panels: Vec<Option<&ImageGrid>> = vec![Some(real.label.grid()), Some(real.ct.grid()), Some(real.pet.grid())];
    panels.extend(synthetic.iter().map(|s| s.map(|s| s.pet.grid())));
    let width = panels.len() * w + (panels.len() - 1) * GAP;
    let mut pixels = vec![GAP_SHADE; width * h];
    for (k, panel) in panels.iter().enumerate() {
        let x0 = k * (w + GAP);
        for r in 0..h {
            for c in 0..w {
                pixels[r * width + x0 + c] = panel.map_or(0, |g| to_byte(g.get(r, c)));
            }
        }
    }
    (width, h, pixels)
}

/// Writes strips for the first `count` studies of `real` under `dir`.
pub fn write_fold_figures(
    dir: &Path,
    fold: usize,
    real: &[PairedStudy],
    synthetic: &SyntheticSets,
    count: usize,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))?;
    let mut written = Vec::new();
    for (i, study) in real.iter().take(count).enumerate() {
        let synth = PANEL_ARMS.map(|arm| synthetic.get(&(fold, arm)).and_then(|set| set.iter().find(|s| s.key() == study.key())));
        let (w, h, pixels) = comparison_strip(study, synth);
        let path = dir.join(format!("fold{fold}_{i:02}_{}_{:04}.png", study.patient_id, study.slice_index));
        save_preview(&path, w, h, pixels)?;
        written.push(path);
    }
    Ok(written)
}
