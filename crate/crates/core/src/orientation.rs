//! Dominant row orientation from Radon-projection variance, and rotation of
//! rasters and detections into the standard orientation.
//!
//! Angles are in degrees, counter-clockwise as seen on screen (with `y`
//! pointing down). A line direction `theta` means the vector
//! `(cos theta, -sin theta)` in pixel coordinates, so horizontal structures
//! have `theta = 180` (equivalently 0) and vertical ones `theta = 90`.
//! The standard orientation puts crop rows vertical, running top to bottom.

use rayon::prelude::*;
use thiserror::Error;

use crate::detections::Detection;
use crate::geometry::{Homography, Point2};
use crate::raster::{Raster, ScalarMap};

/// Profile max/min ratio below which an estimate is flagged.
pub const LOW_CONFIDENCE_RATIO: f64 = 2.0;
/// Orientation of rows in the standardized frame.
pub const STANDARD_ROW_ANGLE: f64 = 90.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrientationError {
    #[error("image is constant; orientation undefined")]
    DegenerateImage,
    #[error("expected a single-channel map, found {0} channels")]
    ChannelMismatch(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleEstimate {
    /// Dominant line direction in whole degrees, `1..=180`.
    pub theta: u32,
    /// Projection variance for angles `1..=180`; entry `k` is angle `k + 1`.
    pub variance_profile: Vec<f64>,
    /// Set when the profile is too flat to trust.
    pub low_confidence: bool,
}

impl AngleEstimate {
    pub fn contrast_ratio(&self) -> f64 {
        let max = self.variance_profile.iter().copied().fold(f64::MIN, f64::max);
        let min = self.variance_profile.iter().copied().fold(f64::MAX, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Rotation that brings the estimated rows to vertical. A low-confidence
    /// estimate yields no rotation.
    pub fn standardizing_rotation(&self) -> f64 {
        if self.low_confidence {
            0.0
        } else {
            standardizing_rotation(self.theta as f64)
        }
    }

    /// Profile as `angle,variance` CSV lines with a header.
    pub fn profile_csv(&self) -> String {
        let mut s = String::from("angle,variance\n");
        for (k, v) in self.variance_profile.iter().enumerate() {
            s.push_str(&format!("{},{v}\n", k + 1));
        }
        s
    }
}

/// Counter-clockwise rotation that turns direction `theta` vertical.
pub fn standardizing_rotation(theta: f64) -> f64 {
    let mut r = STANDARD_ROW_ANGLE - theta;
    while r > 90.0 {
        r -= 180.0;
    }
    while r <= -90.0 {
        r += 180.0;
    }
    r
}

/// Scalar pixel types that can be bilinearly resampled.
pub trait Sample: Copy + Default + Send + Sync {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Sample for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl Sample for u8 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
}

/// Canvas size that holds a `w x h` image rotated by `degrees`.
pub fn rotated_dims(w: usize, h: usize, degrees: f64) -> (usize, usize) {
    let (s, c) = degrees.to_radians().sin_cos();
    let (s, c) = (s.abs(), c.abs());
    let (wf, hf) = (w as f64, h as f64);
    let nw = (wf * c + hf * s - 1e-6).ceil().max(1.0) as usize;
    let nh = (wf * s + hf * c - 1e-6).ceil().max(1.0) as usize;
    (nw, nh)
}

/// Map from source pixel coordinates to the rotated canvas: rotation about
/// the source center `((w-1)/2, (h-1)/2)` followed by a shift onto the
/// canvas center.
pub fn rotation_homography(degrees: f64, old_dims: (usize, usize), new_dims: (usize, usize)) -> Homography {
    let c_old = Point2::new((old_dims.0 as f64 - 1.0) / 2.0, (old_dims.1 as f64 - 1.0) / 2.0);
    let c_new = Point2::new((new_dims.0 as f64 - 1.0) / 2.0, (new_dims.1 as f64 - 1.0) / 2.0);
    Homography::translation(c_new.x - c_old.x, c_new.y - c_old.y, 0, 0) * Homography::rotation_about(degrees, c_old, 0)
}

/// Resampling rule for [`rotate_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    /// Each output pixel copies one source pixel, so pixel-scale variance
    /// is the same at every angle.
    Nearest,
}

/// Rotates about the image center with bilinear interpolation onto an
/// enlarged canvas; uncovered pixels are 0.
pub fn rotate<T: Sample>(img: &Raster<T>, degrees: f64) -> Raster<T> {
    rotate_with(img, degrees, Interpolation::Bilinear)
}

pub fn rotate_with<T: Sample>(img: &Raster<T>, degrees: f64, interp: Interpolation) -> Raster<T> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let (nw, nh) = rotated_dims(w, h, degrees);
    let mut out = Raster::<T>::new(nw, nh, ch);
    if w == 0 || h == 0 {
        return out;
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (ncx, ncy) = ((nw as f64 - 1.0) / 2.0, (nh as f64 - 1.0) / 2.0);
    let src = img.data();
    let eps = 1e-9;
    out.data_mut()
        .par_chunks_mut(nw * ch)
        .enumerate()
        .for_each(|(yo, row)| {
            let dyo = yo as f64 - ncy;
            for xo in 0..nw {
                let dxo = xo as f64 - ncx;
                // Inverse of x' = c dx + s dy, y' = -s dx + c dy.
                let sx = c * dxo - s * dyo + cx;
                let sy = s * dxo + c * dyo + cy;
                if sx < -eps || sy < -eps || sx > w as f64 - 1.0 + eps || sy > h as f64 - 1.0 + eps {
                    continue;
                }
                let sx = sx.clamp(0.0, w as f64 - 1.0);
                let sy = sy.clamp(0.0, h as f64 - 1.0);
                if interp == Interpolation::Nearest {
                    let at = (sy.round() as usize * w + sx.round() as usize) * ch;
                    row[xo * ch..(xo + 1) * ch].copy_from_slice(&src[at..at + ch]);
                    continue;
                }
                let x0 = sx.floor() as usize;
                let y0 = sy.floor() as usize;
                let fx = sx - x0 as f64;
                let fy = sy - y0 as f64;
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                for k in 0..ch {
                    let p = |x: usize, y: usize| src[(y * w + x) * ch + k].to_f64();
                    let v = if fx == 0.0 && fy == 0.0 {
                        p(x0, y0)
                    } else {
                        (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0))
                            + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
                    };
                    row[xo * ch + k] = T::from_f64(v);
                }
            }
        });
    out
}

/// Moves detections with the raster rotation; box sizes become the
/// envelope of the rotated box.
pub fn rotate_detections(
    dets: &[Detection],
    degrees: f64,
    old_dims: (usize, usize),
    new_dims: (usize, usize),
) -> Vec<Detection> {
    let h = rotation_homography(degrees, old_dims, new_dims);
    let (s, c) = degrees.to_radians().sin_cos();
    let (s, c) = (s.abs(), c.abs());
    dets.iter()
        .map(|d| {
            // Affine map: the homogeneous scale is exactly 1.
            let p = h.project_point(d.center()).expect("rotation is affine");
            let mut out = *d;
            out.cx = p.x;
            out.cy = p.y;
            out.w = d.w * c + d.h * s;
            out.h = d.w * s + d.h * c;
            out
        })
        .collect()
}

/// Line integrals along direction `theta`: the mean-centered map is rotated
/// so `theta` points down the columns, then each column is summed.
///
/// Sampling is nearest-neighbour. Bilinear weights would smooth pixel noise
/// at oblique angles only, biasing the variance profile toward 90 and 180.
pub fn projection(centered: &ScalarMap, theta: f64) -> Vec<f64> {
    let rotated = rotate_with(centered, standardizing_rotation(theta), Interpolation::Nearest);
    let w = rotated.width();
    let mut sums = vec![0.0; w];
    for row in rotated.data().chunks_exact(w) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Radon-projection variance for every whole angle in `1..=180`.
///
/// The map is mean-centered first so the zero fill around rotated content
/// does not bias the profile.
pub fn radon_variance(img: &ScalarMap) -> Result<AngleEstimate, OrientationError> {
    if img.channels() != 1 {
        return Err(OrientationError::ChannelMismatch(img.channels()));
    }
    let (lo, hi) = img.min_max().ok_or(OrientationError::DegenerateImage)?;
    if !(hi > lo) {
        return Err(OrientationError::DegenerateImage);
    }
    let mean = img.mean();
    let centered = img.map(|v| v - mean);
    let profile: Vec<f64> = (1..=180u32)
        .into_par_iter()
        .map(|a| variance(&projection(&centered, a as f64)))
        .collect();
    let mut best = 0usize;
    for (k, v) in profile.iter().enumerate() {
        if *v > profile[best] {
            best = k;
        }
    }
    let mut est = AngleEstimate {
        theta: best as u32 + 1,
        variance_profile: profile,
        low_confidence: false,
    };
    est.low_confidence = est.contrast_ratio() < LOW_CONFIDENCE_RATIO;
    if est.low_confidence {
        log::warn!(
            "row orientation is ambiguous (profile ratio {:.2}); assuming rows are already vertical",
            est.contrast_ratio()
        );
    }
    Ok(est)
}

/// Radon estimate on a copy block-averaged so its longer side is at most
/// `max_dim` pixels.
pub fn radon_variance_downsampled(img: &ScalarMap, max_dim: usize) -> Result<AngleEstimate, OrientationError> {
    let longest = img.width().max(img.height());
    let factor = longest.div_ceil(max_dim.max(1)).max(1);
    radon_variance(&img.downsample(factor))
}

/// Smallest angular distance between two line directions, modulo 180.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}
