//! Image grids and the three modality specializations.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smallest admissible side length.
pub const MIN_SIDE: usize = 8;

/// A 2-D scalar field with declared value bounds. Row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f32>,
    value_range: (f32, f32),
}

/// Checks the side-length constraint required by the U-Net ladder.
pub fn check_side(side: usize) -> Result<()> {
    if side < MIN_SIDE || !side.is_power_of_two() {
        return Err(Error::Validation(format!(
            "image side {side} must be a power of two and at least {MIN_SIDE}"
        )));
    }
    Ok(())
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f32>, value_range: (f32, f32)) -> Result<Self> {
        check_side(height)?;
        check_side(width)?;
        if values.len() != height * width {
            return Err(Error::Validation(format!(
                "{} values for a {height}x{width} grid",
                values.len()
            )));
        }
        let (lo, hi) = value_range;
        if !(lo <= hi) {
            return Err(Error::Validation(format!("empty value range ({lo}, {hi})")));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= lo && v <= hi))
        {
            return Err(Error::Validation(format!(
                "pixel ({}, {}) = {v} outside [{lo}, {hi}]",
                i / width,
                i % width
            )));
        }
        Ok(ImageGrid {
            height,
            width,
            values,
            value_range,
        })
    }

    /// A grid over `[0, 1]`.
    pub fn unit(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(height, width, values, (0.0, 1.0))
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Result<Self> {
        Self::unit(height, width, vec![v; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.value_range
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Binary tumor mask: 1 marks a high-uptake region.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap(ImageGrid);

impl LabelMap {
    pub fn new(grid: ImageGrid) -> Result<Self> {
        if let Some((i, v)) = grid
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| v != 0.0 && v != 1.0)
        {
            return Err(Error::Validation(format!(
                "label pixel ({}, {}) = {v} is not binary",
                i / grid.width(),
                i % grid.width()
            )));
        }
        Ok(LabelMap(grid))
    }

    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        let values = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Self::new(ImageGrid::unit(height, width, values)?)
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(ImageGrid::filled(height, width, 0.0)?)
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.0
    }

    pub fn mask(&self) -> Vec<bool> {
        self.0.values().iter().map(|&v| v == 1.0).collect()
    }

    pub fn positive_count(&self) -> usize {
        self.0.values().iter().filter(|&&v| v == 1.0).count()
    }
}

/// Normalized CT slice; `raw_range` records the intensity window mapped onto `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CtImage {
    grid: ImageGrid,
    raw_range: (f32, f32),
}

/// Default Hounsfield window used when none is recorded.
pub const DEFAULT_CT_WINDOW: (f32, f32) = (-1000.0, 1000.0);

impl CtImage {
    pub fn new(grid: ImageGrid, raw_range: (f32, f32)) -> Result<Self> {
        if grid.value_range() != (0.0, 1.0) {
            return Err(Error::Validation("CT values must be normalized to [0, 1]".into()));
        }
        Ok(CtImage { grid, raw_range })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn raw_range(&self) -> (f32, f32) {
        self.raw_range
    }
}

/// Normalized PET slice; multiplying by `suv_scale` gives SUV-like units.
#[derive(Clone, Debug, PartialEq)]
pub struct PetImage {
    grid: ImageGrid,
    suv_scale: f32,
}

impl PetImage {
    pub fn new(grid: ImageGrid, suv_scale: f32) -> Result<Self> {
        if grid.value_range() != (0.0, 1.0) {
            return Err(Error::Validation("PET values must be normalized to [0, 1]".into()));
        }
        if !(suv_scale > 0.0 && suv_scale.is_finite()) {
            return Err(Error::Validation(format!("suv_scale {suv_scale} must be positive")));
        }
        Ok(PetImage { grid, suv_scale })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn suv_scale(&self) -> f32 {
        self.suv_scale
    }

    pub fn suv(&self, row: usize, col: usize) -> f32 {
        self.grid.get(row, col) * self.suv_scale
    }
}

/// Which image kind a file holds; decides the validation applied on read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Label,
    Ct,
    Pet,
}
