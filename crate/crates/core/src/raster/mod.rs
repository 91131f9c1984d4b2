//! Image containers and the classical vegetation detector.
//!
//! Rasters are row-major with interleaved channels. Pixel `(x, y)` is column
//! `x`, row `y`, matching [`crate::geometry`].

mod classical;
mod distance;
mod filters;
pub mod io;
mod morphology;
mod watershed;

use thiserror::Error;

pub use classical::{classical_detect, classical_detect_staged, ClassicalConfig, ClassicalStages};
pub use distance::{distance_transform, normalized};
pub use filters::{exg, median_filter, otsu_threshold, OtsuResult, OTSU_BINS};
pub use morphology::{
    auto_disk_radius, auto_disk_radius_with, components, erode_disk, region_stats, RegionStats, DEFAULT_RADIUS_FRACTION,
};
pub use watershed::{regional_maxima, watershed};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("median window must be odd and >= 1, got {rows}x{cols}")]
    BadWindow { rows: usize, cols: usize },
    #[error("expected {expected} channel(s), found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("image is constant; no threshold separates it")]
    DegenerateImage,
    #[error("mask has no foreground components")]
    EmptyMask,
    #[error("marker {index} at ({x}, {y}) is not on the foreground")]
    MarkerOffMask { index: usize, x: f64, y: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image i/o: {0}")]
    Image(#[from] image::ImageError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

/// 8-bit interleaved RGB image.
pub type RgbImage = Raster<u8>;
/// Single-channel real-valued map.
pub type ScalarMap = Raster<f64>;

impl<T: Copy + Default> Raster<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, T::default())
    }
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        assert!(channels >= 1);
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self, RasterError> {
        if data.len() != width * height * channels || channels == 0 {
            return Err(RasterError::DimensionMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [T] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Copies the window `[x0, x0 + w) x [y0, y0 + h)`, clipped to the raster.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let x1 = (x0 + w).min(self.width);
        let y1 = (y0 + h).min(self.height);
        let x0 = x0.min(x1);
        let y0 = y0.min(y1);
        let cw = x1 - x0;
        let mut data = Vec::with_capacity(cw * (y1 - y0) * self.channels);
        for y in y0..y1 {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + cw * self.channels]);
        }
        Self {
            width: cw,
            height: y1 - y0,
            channels: self.channels,
            data,
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl ScalarMap {
    pub fn min_max(&self) -> Option<(f64, f64)> {
        let mut it = self.data.iter().copied().filter(|v| v.is_finite());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Block-average downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> ScalarMap {
        let factor = factor.max(1);
        if factor == 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut sum = vec![0.0; w * h];
        let mut cnt = vec![0u32; w * h];
        for y in 0..self.height {
            let row = (y / factor) * w;
            for x in 0..self.width {
                let i = row + x / factor;
                sum[i] += self.data[(y * self.width + x) * self.channels];
                cnt[i] += 1;
            }
        }
        let data = sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect();
        Raster {
            width: w,
            height: h,
            channels: 1,
            data,
        }
    }
}

/// Row-major foreground mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, RasterError> {
        if bits.len() != width * height {
            return Err(RasterError::DimensionMismatch(format!(
                "{} bits for {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_scalar(&self) -> ScalarMap {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Per-pixel region labels, `0` for background and `1..=K` for regions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            count: 0,
        }
    }

    /// Renumbers labels to `1..=K` in order of first appearance.
    pub(crate) fn from_raw(width: usize, height: usize, mut labels: Vec<u32>) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut next = 0u32;
        for l in labels.iter_mut() {
            if *l == 0 {
                continue;
            }
            let n = *remap.entry(*l).or_insert_with(|| {
                next += 1;
                next
            });
            *l = n;
        }
        Self {
            width,
            height,
            labels,
            count: next,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Number of regions `K`.
    pub fn count(&self) -> u32 {
        self.count
    }
}

pub(crate) const NEIGHBORS8: [(isize, isize); 8] =
    [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];
