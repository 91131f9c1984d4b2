use super::{BinaryMask, Raster, RasterError, RgbImage, ScalarMap};

pub const OTSU_BINS: usize = 256;

/// Per-channel `rows x cols` median with edge replication.
pub fn median_filter<T>(img: &Raster<T>, rows: usize, cols: usize) -> Result<Raster<T>, RasterError>
where
    T: Copy + PartialOrd,
{
    if rows == 0 || cols == 0 || rows.is_multiple_of(2) || cols.is_multiple_of(2) {
        return Err(RasterError::BadWindow { rows, cols });
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    if w == 0 || h == 0 || (rows == 1 && cols == 1) {
        return Ok(out);
    }
    let (ry, rx) = ((rows / 2) as isize, (cols / 2) as isize);
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mid = rows * cols / 2;
    let src = img.data();
    let mut window: Vec<T> = Vec::with_capacity(rows * cols);
    for y in 0..h {
        let ys: Vec<usize> = (-ry..=ry).map(|d| clamp(y as isize + d, h)).collect();
        for x in 0..w {
            let xs: Vec<usize> = (-rx..=rx).map(|d| clamp(x as isize + d, w)).collect();
            for c in 0..ch {
                window.clear();
                for &yy in &ys {
                    let row = yy * w;
                    for &xx in &xs {
                        window.push(src[(row + xx) * ch + c]);
                    }
                }
                let (_, m, _) =
                    window.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                out.set(x, y, c, *m);
            }
        }
    }
    Ok(out)
}

/// Excess-green index `2G - R - B` per pixel, unclamped.
pub fn exg(img: &RgbImage) -> Result<ScalarMap, RasterError> {
    if img.channels() != 3 {
        return Err(RasterError::ChannelMismatch {
            expected: 3,
            found: img.channels(),
        });
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| 2.0 * p[1] as f64 - p[0] as f64 - p[2] as f64)
        .collect();
    ScalarMap::from_vec(img.width(), img.height(), 1, data)
}

#[derive(Debug, Clone)]
pub struct OtsuResult {
    /// Upper edge of the background class in the input's value units.
    pub threshold: f64,
    /// Last histogram bin assigned to the background class.
    pub bin: usize,
    pub mask: BinaryMask,
}

/// Bin index of `v` after min-max normalization into [`OTSU_BINS`] bins.
pub(crate) fn otsu_bin(v: f64, lo: f64, hi: f64) -> usize {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    ((t * (OTSU_BINS - 1) as f64).round() as usize).min(OTSU_BINS - 1)
}

/// Otsu threshold over a 256-bin histogram of the min-max normalized map.
///
/// The returned bin `t` maximizes the between-class variance with class 0 =
/// bins `0..=t`. The first maximizing bin wins. Pixels in bins above `t` are
/// foreground.
pub fn otsu_threshold(img: &ScalarMap) -> Result<OtsuResult, RasterError> {
    if img.channels() != 1 {
        return Err(RasterError::ChannelMismatch {
            expected: 1,
            found: img.channels(),
        });
    }
    let (lo, hi) = img.min_max().ok_or(RasterError::DegenerateImage)?;
    if !(hi > lo) {
        return Err(RasterError::DegenerateImage);
    }
    let mut hist = [0u64; OTSU_BINS];
    for &v in img.data() {
        hist[otsu_bin(v, lo, hi)] += 1;
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &n)| i as f64 * n as f64).sum();

    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    for (t, &n) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += n;
        sum0 += t as f64 * n as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, t);
        }
    }
    let bin = best.1;
    let threshold = lo + (bin as f64 + 0.5) / (OTSU_BINS - 1) as f64 * (hi - lo);
    let bits = img.data().iter().map(|&v| otsu_bin(v, lo, hi) > bin).collect();
    Ok(OtsuResult {
        threshold,
        bin,
        mask: BinaryMask::from_bits(img.width(), img.height(), bits)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_constant_and_salt() {
        let img = ScalarMap::filled(7, 6, 1, 3.0);
        assert_eq!(median_filter(&img, 3, 3).unwrap(), img);
        let mut salt = Raster::<u8>::filled(9, 9, 1, 20);
        salt.set(4, 4, 0, 255);
        let out = median_filter(&salt, 3, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 20));
    }

    #[test]
    fn median_rejects_bad_windows() {
        let img = ScalarMap::filled(3, 3, 1, 0.0);
        for (r, c) in [(0, 3), (2, 3), (3, 4)] {
            assert!(matches!(median_filter(&img, r, c), Err(RasterError::BadWindow { .. })));
        }
    }

    #[test]
    fn median_is_per_channel() {
        let mut img = Raster::<u8>::filled(5, 5, 3, 0);
        for y in 0..5 {
            for x in 0..5 {
                img.pixel_mut(x, y).copy_from_slice(&[10, 20, 30]);
            }
        }
        img.pixel_mut(2, 2).copy_from_slice(&[200, 0, 200]);
        let out = median_filter(&img, 3, 3).unwrap();
        assert_eq!(out.pixel(2, 2), &[10, 20, 30]);
    }

    #[test]
    fn exg_formula() {
        let img = Raster::<u8>::from_vec(3, 1, 3, vec![50, 100, 30, 77, 77, 77, 0, 255, 0]).unwrap();
        let e = exg(&img).unwrap();
        assert_eq!(e.data(), &[120.0, 0.0, 510.0]);
        let gray = Raster::<u8>::new(2, 2, 1);
        assert!(matches!(exg(&gray), Err(RasterError::ChannelMismatch { .. })));
    }

    #[test]
    fn otsu_bimodal_and_constant() {
        let img = ScalarMap::from_fn(10, 10, |x, _| if x < 5 { 10.0 } else { 200.0 });
        let r = otsu_threshold(&img).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(r.mask.get(x, y), x >= 5);
            }
        }
        assert!(r.threshold > 10.0 && r.threshold < 200.0);
        let flat = ScalarMap::filled(4, 4, 1, 1.5);
        assert!(matches!(otsu_threshold(&flat), Err(RasterError::DegenerateImage)));
    }
}
