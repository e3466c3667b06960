//! Lossless 16-bit grayscale PNG storage for normalized grids.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::grid::{ImageGrid, ImageKind, LabelMap};
use crate::{Error, Result};

const LEVELS: f64 = 65535.0;

/// Quantizes a `[0, 1]` value to a 16-bit code (products formed in f64 so ties round consistently).
pub fn quantize(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * LEVELS).round() as u16
}

pub fn dequantize(q: u16) -> f32 {
    (q as f64 / LEVELS) as f32
}

fn image_error(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Writes `grid` (values in `[0, 1]`) as a 16-bit grayscale PNG.
pub fn save_image(grid: &ImageGrid, path: &Path) -> Result<()> {
    let (lo, hi) = grid.value_range();
    if lo < 0.0 || hi > 1.0 {
        return Err(image_error(path, "only grids within [0, 1] can be stored"));
    }
    let data: Vec<u16> = grid.values().iter().map(|&v| quantize(v)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, data)
            .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => image_error(path, other),
    })
}

/// Reads a 16-bit grayscale PNG back into a `[0, 1]` grid, validating it for `kind`.
pub fn read_image(path: &Path, kind: ImageKind) -> Result<ImageGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| image_error(path, format!("corrupt image: {e}")))?;
    let buf = match decoded {
        DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(image_error(
                path,
                format!("unsupported pixel format {:?}; expected 16-bit grayscale", other.color()),
            ))
        }
    };
    let (w, h) = buf.dimensions();
    let values = buf.into_raw().into_iter().map(dequantize).collect();
    let grid = ImageGrid::unit(h as usize, w as usize, values)
        .map_err(|e| image_error(path, e))?;
    if kind == ImageKind::Label {
        LabelMap::new(grid.clone()).map_err(|e| image_error(path, e))?;
    }
    Ok(grid)
}

/// Writes an 8-bit grayscale preview image (row-major bytes).
pub fn save_preview(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, pixels)
            .ok_or_else(|| image_error(path, "preview buffer does not match dimensions"))?;
    buf.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => image_error(path, other),
    })
}
