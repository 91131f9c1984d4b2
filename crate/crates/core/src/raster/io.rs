//! Thin decode/encode layer over the `image` crate.

use std::path::Path;

use super::{Raster, RasterError, RgbImage, ScalarMap};

/// Decodes any supported lossless format into 8-bit RGB.
pub fn read_rgb(path: &Path) -> Result<RgbImage, RasterError> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Raster::from_vec(w as usize, h as usize, 3, img.into_raw())
}

/// Encodes an RGB raster; the format follows the file extension.
pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<(), RasterError> {
    if img.channels() != 3 {
        return Err(RasterError::ChannelMismatch {
            expected: 3,
            found: img.channels(),
        });
    }
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| RasterError::DimensionMismatch("rgb buffer".into()))?;
    buf.save(path)?;
    Ok(())
}

/// Writes a scalar map as 8-bit grayscale, min-max stretched.
pub fn write_gray(map: &ScalarMap, path: &Path) -> Result<(), RasterError> {
    let (lo, hi) = map.min_max().unwrap_or((0.0, 1.0));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(map.width() as u32, map.height() as u32, bytes)
        .ok_or_else(|| RasterError::DimensionMismatch("gray buffer".into()))?;
    buf.save(path)?;
    Ok(())
}
