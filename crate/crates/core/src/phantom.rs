//! Procedural thorax phantoms with aligned label, CT and PET slices.
//!
//! Anatomy is a body ellipse holding two lung ellipses, a mediastinal band
//! between them and a vertebral disc below. Tumors are Gaussian hot spots
//! centred in a lung or in the mediastinum. The label is recovered from the
//! clean (pre-blur, noise-free) uptake map by connected peak thresholding.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{write_dataset, Dataset, PairedStudy};
use crate::grid::{check_side, CtImage, ImageGrid, LabelMap, PetImage, DEFAULT_CT_WINDOW};
use crate::regions::{flood_fill, neighbors8};
use crate::{Error, Result};

/// Fraction of each hot spot's peak used as its segmentation threshold.
pub const PEAK_FRACTION: f32 = 0.40;

/// SUV multiplier recorded for phantom PET slices.
pub const PHANTOM_SUV_SCALE: f32 = 12.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub image_size: usize,
    pub tumors_per_slice: (u32, u32),
    /// Pixels at which a tumor's profile falls to [`PEAK_FRACTION`] of its peak.
    pub tumor_radius: (f32, f32),
    pub pet_noise_sigma: f32,
    pub pet_blur_sigma: f32,
    pub background_uptake: f32,
    pub tumor_uptake: (f32, f32),
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            image_size: 64,
            tumors_per_slice: (1, 4),
            tumor_radius: (2.0, 6.0),
            pet_noise_sigma: 0.02,
            pet_blur_sigma: 1.0,
            background_uptake: 0.25,
            tumor_uptake: (0.6, 1.0),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        check_side(self.image_size)?;
        let bad = |m: String| Err(Error::Validation(format!("phantom config: {m}")));
        let (tmin, tmax) = self.tumors_per_slice;
        if tmin > tmax {
            return bad(format!("tumors_per_slice ({tmin}, {tmax}) is reversed"));
        }
        let (rmin, rmax) = self.tumor_radius;
        if !(rmin > 0.0 && rmin <= rmax) {
            return bad(format!("tumor_radius ({rmin}, {rmax}) must satisfy 0 < min <= max"));
        }
        if !(self.pet_noise_sigma >= 0.0 && self.pet_blur_sigma >= 0.0) {
            return bad("noise and blur sigmas must be non-negative".into());
        }
        let bg = self.background_uptake;
        if !(bg > 0.0 && bg < 1.0) {
            return bad(format!("background_uptake {bg} must lie in (0, 1)"));
        }
        let (umin, umax) = self.tumor_uptake;
        if !(umin > bg && umin <= umax && umax <= 1.0) {
            return bad(format!(
                "tumor_uptake ({umin}, {umax}) must satisfy background < min <= max <= 1"
            ));
        }
        Ok(())
    }

    /// Local maxima must exceed this value to seed a hot spot.
    pub fn hot_spot_floor(&self) -> f32 {
        self.background_uptake + 0.5 * (self.tumor_uptake.0 - self.background_uptake)
    }
}

/// Stable 64-bit stream key; independent of platform and toolchain hashing.
pub fn stream_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f32,
    cy: f32,
    ax: f32,
    ay: f32,
}

impl Ellipse {
    fn level(&self, x: f32, y: f32) -> f32 {
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy
    }

    fn contains(&self, x: f32, y: f32) -> bool {
        self.level(x, y) < 1.0
    }
}

/// Anatomy of one slice, in pixel coordinates (x = column, y = row).
#[derive(Clone, Debug)]
struct Anatomy {
    body: Ellipse,
    lungs: [Ellipse; 2],
    mediastinum: (f32, f32, f32, f32),
    spine: Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tissue {
    Air,
    Soft,
    Lung,
    Mediastinum,
    Bone,
}

impl Anatomy {
    fn sample(cfg: &PhantomConfig, patient_id: &str, slice_index: u32) -> Anatomy {
        let s = cfg.image_size as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &[b"anatomy", patient_id.as_bytes()]));
        let mut jitter = |scale: f32| rng.gen_range(-scale..=scale);
        let cx = 0.5 + jitter(0.015);
        let cy = 0.52 + jitter(0.015);
        let body_ax = 0.40 * (1.0 + jitter(0.05));
        let body_ay = 0.30 * (1.0 + jitter(0.05));
        let lung_dx = 0.19 + jitter(0.01);
        let lung_ax = 0.13 + jitter(0.008);
        let lung_ay = 0.19 + jitter(0.015);
        let med_half = 0.045 + jitter(0.006);
        let phase = jitter(std::f32::consts::PI);
        // lungs swell and shrink along the body axis
        let z = 0.96 + 0.04 * (0.35 * slice_index as f32 + phase).cos();
        let lung = |side: f32| Ellipse {
            cx: (cx + side * lung_dx) * s,
            cy: (cy - 0.01) * s,
            ax: lung_ax * z * s,
            ay: lung_ay * z * s,
        };
        Anatomy {
            body: Ellipse {
                cx: cx * s,
                cy: cy * s,
                ax: body_ax * s,
                ay: body_ay * s,
            },
            lungs: [lung(-1.0), lung(1.0)],
            mediastinum: (
                (cx - med_half) * s,
                (cx + med_half) * s,
                (cy - 0.17) * s,
                (cy + 0.13) * s,
            ),
            spine: Ellipse {
                cx: cx * s,
                cy: (cy + 0.2) * s,
                ax: 0.05 * s,
                ay: 0.045 * s,
            },
        }
    }

    fn in_mediastinum(&self, x: f32, y: f32) -> bool {
        let (x0, x1, y0, y1) = self.mediastinum;
        x > x0 && x < x1 && y > y0 && y < y1 && self.body.contains(x, y)
    }

    fn tissue(&self, x: f32, y: f32) -> Tissue {
        if !self.body.contains(x, y) {
            Tissue::Air
        } else if self.lungs.iter().any(|l| l.contains(x, y)) {
            Tissue::Lung
        } else if self.spine.contains(x, y) {
            Tissue::Bone
        } else if self.in_mediastinum(x, y) {
            Tissue::Mediastinum
        } else {
            Tissue::Soft
        }
    }

    /// True when the whole disc of `radius` around (x, y) lies inside the body.
    fn disc_in_body(&self, x: f32, y: f32, radius: f32) -> bool {
        (0..64).all(|i| {
            let a = i as f32 * std::f32::consts::TAU / 64.0;
            self.body.contains(x + (radius + 0.5) * a.cos(), y + (radius + 0.5) * a.sin())
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Tumor {
    x: f32,
    y: f32,
    radius: f32,
    peak: f32,
}

impl Tumor {
    fn value(&self, x: f32, y: f32) -> f32 {
        // profile reaches PEAK_FRACTION of the peak exactly at `radius`
        let d2 = (x - self.x).powi(2) + (y - self.y).powi(2);
        let k = -(PEAK_FRACTION.ln()) / (self.radius * self.radius);
        self.peak * (-k * d2).exp()
    }
}

const LAYOUT_ROUNDS: usize = 50;

/// Draws a tumor layout, redrawing the whole layout (count, sizes, positions)
/// from the same stream when one round cannot place every tumor.
fn place_tumors(
    cfg: &PhantomConfig,
    anatomy: &Anatomy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tumor>> {
    let mut last = None;
    for _ in 0..LAYOUT_ROUNDS {
        match try_layout(cfg, anatomy, rng) {
            Ok(tumors) => return Ok(tumors),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one round"))
}

fn try_layout(
    cfg: &PhantomConfig,
    anatomy: &Anatomy,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Tumor>> {
    let (nmin, nmax) = cfg.tumors_per_slice;
    let count = rng.gen_range(nmin..=nmax);
    let mut tumors: Vec<Tumor> = Vec::with_capacity(count as usize);
    for t in 0..count {
        let radius = rng.gen_range(cfg.tumor_radius.0..=cfg.tumor_radius.1);
        let peak = rng.gen_range(cfg.tumor_uptake.0..=cfg.tumor_uptake.1);
        let mut placed = None;
        for _attempt in 0..200 {
            let region = rng.gen_range(0..4);
            let (x, y) = if region < 3 {
                let lung = anatomy.lungs[region % 2];
                (
                    rng.gen_range(lung.cx - lung.ax..lung.cx + lung.ax),
                    rng.gen_range(lung.cy - lung.ay..lung.cy + lung.ay),
                )
            } else {
                let (x0, x1, y0, y1) = anatomy.mediastinum;
                (rng.gen_range(x0..x1), rng.gen_range(y0..y1))
            };
            let in_region = if region < 3 {
                anatomy.lungs[region % 2].contains(x, y)
            } else {
                anatomy.in_mediastinum(x, y)
            };
            if !in_region || !anatomy.disc_in_body(x, y, radius) {
                continue;
            }
            let separated = tumors.iter().all(|o| {
                let d = ((o.x - x).powi(2) + (o.y - y).powi(2)).sqrt();
                d > 1.3 * (o.radius + radius) + 2.0
            });
            if separated {
                placed = Some(Tumor { x, y, radius, peak });
                break;
            }
        }
        match placed {
            Some(tumor) => tumors.push(tumor),
            None => {
                return Err(Error::Generation(format!(
                    "could not place tumor {} of {count} (radius {radius:.1} px) inside the lungs or mediastinum",
                    t + 1
                )))
            }
        }
    }
    Ok(tumors)
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let half = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f32> = (-half..=half)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(values: &[f32], height: usize, width: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let half = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            tmp[r * width + c] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * values[r * width + clamp(c as isize + j as isize - half, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[clamp(r as isize + j as isize - half, height) * width + c])
                .sum();
        }
    }
    out
}

/// A generated slice plus the intermediate maps that produced it.
#[derive(Clone, Debug)]
pub struct PhantomSlice {
    pub study: PairedStudy,
    /// Pre-blur, noise-free uptake (anatomy plus tumors).
    pub clean_uptake: Vec<f32>,
    /// Mask of the body ellipse.
    pub body: Vec<bool>,
    pub tumor_count: usize,
}

/// Renders one deterministic phantom slice.
pub fn generate_slice(cfg: &PhantomConfig, patient_id: &str, slice_index: u32) -> Result<PhantomSlice> {
    cfg.validate()?;
    let s = cfg.image_size;
    let anatomy = Anatomy::sample(cfg, patient_id, slice_index);
    let min_lung = anatomy.lungs.iter().map(|l| l.ax.min(l.ay)).fold(f32::INFINITY, f32::min);
    if cfg.tumor_radius.1 >= min_lung {
        return Err(Error::Generation(format!(
            "tumor radius {} px does not fit in a lung of half-width {min_lung:.1} px",
            cfg.tumor_radius.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        cfg.seed,
        &[b"slice", patient_id.as_bytes(), &slice_index.to_le_bytes()],
    ));
    let tumors = place_tumors(cfg, &anatomy, &mut rng)?;
    let bg = cfg.background_uptake;

    let n = s * s;
    let mut ct = vec![0.0f32; n];
    let mut clean = vec![0.0f32; n];
    let mut body = vec![false; n];
    for r in 0..s {
        for c in 0..s {
            let (x, y) = (c as f32 + 0.5, r as f32 + 0.5);
            let i = r * s + c;
            let tissue = anatomy.tissue(x, y);
            body[i] = tissue != Tissue::Air;
            let (ct_v, pet_v) = match tissue {
                Tissue::Air => (0.0, 0.0),
                Tissue::Soft => (0.55, 0.6 * bg),
                Tissue::Lung => (0.12, 0.2 * bg),
                Tissue::Mediastinum => (0.63, 0.8 * bg),
                Tissue::Bone => (0.95, 0.5 * bg),
            };
            ct[i] = ct_v;
            clean[i] = tumors.iter().map(|t| t.value(x, y)).fold(pet_v, f32::max);
        }
    }

    let ct_noise = Normal::new(0.0f32, 0.01).unwrap();
    for (v, &inside) in ct.iter_mut().zip(&body) {
        if inside {
            *v = (*v + ct_noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let mut pet = gaussian_blur(&clean, s, s, cfg.pet_blur_sigma);
    if cfg.pet_noise_sigma > 0.0 {
        let noise = Normal::new(0.0f32, cfg.pet_noise_sigma).unwrap();
        for v in &mut pet {
            *v += noise.sample(&mut rng);
        }
    }
    pet.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let clean_pet = PetImage::new(ImageGrid::unit(s, s, clean.clone())?, PHANTOM_SUV_SCALE)?;
    let label = derive_label(&clean_pet, PEAK_FRACTION, cfg.hot_spot_floor())?;
    let study = PairedStudy::new(
        patient_id,
        slice_index,
        label,
        CtImage::new(ImageGrid::unit(s, s, ct)?, DEFAULT_CT_WINDOW)?,
        PetImage::new(ImageGrid::unit(s, s, pet)?, PHANTOM_SUV_SCALE)?,
    )?;
    Ok(PhantomSlice {
        study,
        clean_uptake: clean,
        body,
        tumor_count: tumors.len(),
    })
}

/// Deterministic in `(cfg.seed, patient_id, slice_index)`.
pub fn generate_study(cfg: &PhantomConfig, patient_id: &str, slice_index: u32) -> Result<PairedStudy> {
    generate_slice(cfg, patient_id, slice_index).map(|s| s.study)
}

/// Pixels that are local maxima (not below any neighbour, above at least one) and above `floor`.
fn hot_spot_seeds(values: &[f32], height: usize, width: usize, floor: f32) -> Vec<usize> {
    (0..values.len())
        .filter(|&i| {
            let v = values[i];
            if !(v > floor) {
                return false;
            }
            let mut strictly_above_one = false;
            for q in neighbors8(i, height, width) {
                if values[q] > v {
                    return false;
                }
                strictly_above_one |= values[q] < v;
            }
            strictly_above_one
        })
        .collect()
}

/// Connected peak thresholding.
///
/// Every local maximum above `floor` seeds a hot spot; the hot spot is the
/// 8-connected region around the seed where the value stays at or above
/// `peak_fraction` times the seed value. The label is the union of all hot
/// spots. Constant images have no local maximum and give an empty label.
pub fn derive_label(pet: &PetImage, peak_fraction: f32, floor: f32) -> Result<LabelMap> {
    if !(peak_fraction > 0.0 && peak_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "peak_fraction {peak_fraction} must lie in (0, 1)"
        )));
    }
    let grid = pet.grid();
    let (h, w) = grid.dims();
    let values = grid.values();
    let mut seeds = hot_spot_seeds(values, h, w, floor);
    // Ascending peaks give ascending thresholds: once a seed is covered by a
    // region grown at a lower threshold its own region is already contained.
    seeds.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut mask = vec![false; values.len()];
    for seed in seeds {
        if mask[seed] {
            continue;
        }
        let threshold = peak_fraction * values[seed];
        for p in flood_fill(h, w, seed, |q| values[q] >= threshold) {
            mask[p] = true;
        }
    }
    LabelMap::from_mask(h, w, &mask)
}

fn patient_name(i: usize, n: usize) -> String {
    let digits = n.to_string().len().max(3);
    format!("P{:0digits$}", i + 1)
}

/// Generates `n_patients x slices_per_patient` studies in memory.
pub fn generate_dataset(
    cfg: &PhantomConfig,
    n_patients: usize,
    slices_per_patient: usize,
) -> Result<Dataset> {
    if n_patients < 2 {
        return Err(Error::Precondition(format!(
            "a corpus needs at least 2 patients for the two-fold split, got {n_patients}"
        )));
    }
    if slices_per_patient == 0 {
        return Err(Error::Precondition("slices_per_patient must be positive".into()));
    }
    let mut studies = Vec::with_capacity(n_patients * slices_per_patient);
    for p in 0..n_patients {
        let id = patient_name(p, n_patients);
        for s in 0..slices_per_patient {
            studies.push(generate_study(cfg, &id, s as u32)?);
        }
    }
    Dataset::new(studies, PathBuf::new())
}

/// Generates a corpus and writes it under `out_dir`; returns the manifest path.
pub fn generate_corpus(
    cfg: &PhantomConfig,
    n_patients: usize,
    slices_per_patient: usize,
    out_dir: &Path,
) -> Result<PathBuf> {
    let ds = generate_dataset(cfg, n_patients, slices_per_patient)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_dataset(ds.studies(), out_dir)
}
