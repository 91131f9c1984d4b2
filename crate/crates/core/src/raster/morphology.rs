use super::{BinaryMask, LabelMap, RasterError, NEIGHBORS8};
use crate::geometry::BBox;

/// Fraction of the mean minor-axis length used as the erosion radius.
pub const DEFAULT_RADIUS_FRACTION: f64 = 0.25;

/// Half-width of the discrete disk `dx^2 + dy^2 <= r^2` on row `dy`.
fn disk_half_width(r: usize, dy: usize) -> usize {
    let rem = (r * r - dy * dy) as f64;
    let mut hw = rem.sqrt().floor() as usize;
    while (hw + 1) * (hw + 1) <= r * r - dy * dy {
        hw += 1;
    }
    while hw * hw > r * r - dy * dy {
        hw -= 1;
    }
    hw
}

/// Binary erosion by the disk `{(dx, dy) : dx^2 + dy^2 <= radius^2}`.
///
/// Offsets that fall outside the image are ignored, so the image border
/// does not erode shapes that touch it.
pub fn erode_disk(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    // Per-row prefix counts of foreground pixels.
    let mut prefix = vec![0u32; (w + 1) * h];
    for y in 0..h {
        let row = &mut prefix[y * (w + 1)..(y + 1) * (w + 1)];
        for x in 0..w {
            row[x + 1] = row[x] + mask.get(x, y) as u32;
        }
    }
    let half: Vec<usize> = (0..=radius).map(|dy| disk_half_width(radius, dy)).collect();
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut keep = true;
            for dy in -(radius as isize)..=(radius as isize) {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let hw = half[dy.unsigned_abs()];
                let x0 = x.saturating_sub(hw);
                let x1 = (x + hw + 1).min(w);
                let row = &prefix[yy as usize * (w + 1)..];
                if (row[x1] - row[x0]) as usize != x1 - x0 {
                    keep = false;
                    break;
                }
            }
            if keep {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// 8-connected components, labeled `1..=K` in raster order of first pixel.
pub fn components(mask: &BinaryMask) -> LabelMap {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask.bits()[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    LabelMap::from_raw(w, h, labels)
}

/// Pixel statistics for one labeled region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionStats {
    pub label: u32,
    pub area: usize,
    pub centroid_x: f64,
    pub centroid_y: f64,
    /// Central second moments normalized by area.
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
    /// Pixel-index bounds, inclusive.
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

impl RegionStats {
    /// Minor axis of the ellipse with the same normalized second moments,
    /// `4 * sqrt(lambda_min)` of the pixel-coordinate covariance. A solid
    /// `n`-pixel-wide bar has variance `(n^2 - 1) / 12` across its width.
    pub fn minor_axis_length(&self) -> f64 {
        let (l_min, _) = self.eigenvalues();
        4.0 * l_min.max(0.0).sqrt()
    }

    pub fn major_axis_length(&self) -> f64 {
        let (_, l_max) = self.eigenvalues();
        4.0 * l_max.max(0.0).sqrt()
    }

    fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.mu20 + self.mu02);
        let diff = 0.5 * (self.mu20 - self.mu02);
        let rad = (diff * diff + self.mu11 * self.mu11).sqrt();
        (mean - rad, mean + rad)
    }

    /// Bounding box in continuous coordinates (pixels as unit squares).
    pub fn bbox(&self) -> BBox {
        BBox::from_corners(
            self.min_x as f64 - 0.5,
            self.min_y as f64 - 0.5,
            self.max_x as f64 + 0.5,
            self.max_y as f64 + 0.5,
        )
    }
}

/// Statistics for labels `1..=K`, indexed by `label - 1`.
pub fn region_stats(labels: &LabelMap) -> Vec<RegionStats> {
    let k = labels.count() as usize;
    let w = labels.width();
    let mut acc = vec![(0usize, 0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64); k];
    let mut bounds = vec![(usize::MAX, usize::MAX, 0usize, 0usize); k];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let a = &mut acc[l as usize - 1];
        let (xf, yf) = (x as f64, y as f64);
        a.0 += 1;
        a.1 += xf;
        a.2 += yf;
        a.3 += xf * xf;
        a.4 += yf * yf;
        a.5 += xf * yf;
        let b = &mut bounds[l as usize - 1];
        b.0 = b.0.min(x);
        b.1 = b.1.min(y);
        b.2 = b.2.max(x);
        b.3 = b.3.max(y);
    }
    acc.iter()
        .zip(bounds)
        .enumerate()
        .map(|(i, (a, b))| {
            let n = a.0 as f64;
            let cx = a.1 / n;
            let cy = a.2 / n;
            RegionStats {
                label: i as u32 + 1,
                area: a.0,
                centroid_x: cx,
                centroid_y: cy,
                mu20: a.3 / n - cx * cx,
                mu02: a.4 / n - cy * cy,
                mu11: a.5 / n - cx * cy,
                min_x: b.0,
                min_y: b.1,
                max_x: b.2,
                max_y: b.3,
            }
        })
        .collect()
}

/// Erosion radius as [`DEFAULT_RADIUS_FRACTION`] of the mean minor-axis
/// length over all connected components.
pub fn auto_disk_radius(mask: &BinaryMask) -> Result<usize, RasterError> {
    auto_disk_radius_with(mask, DEFAULT_RADIUS_FRACTION)
}

pub fn auto_disk_radius_with(mask: &BinaryMask, fraction: f64) -> Result<usize, RasterError> {
    let mean = mean_minor_axis(mask)?;
    Ok((fraction * mean).round().max(0.0) as usize)
}

pub(crate) fn mean_minor_axis(mask: &BinaryMask) -> Result<f64, RasterError> {
    let stats = region_stats(&components(mask));
    if stats.is_empty() {
        return Err(RasterError::EmptyMask);
    }
    Ok(stats.iter().map(RegionStats::minor_axis_length).sum::<f64>() / stats.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            dx * dx + dy * dy <= r * r
        })
    }

    #[test]
    fn half_widths() {
        assert_eq!(disk_half_width(2, 0), 2);
        assert_eq!(disk_half_width(2, 1), 1);
        assert_eq!(disk_half_width(2, 2), 0);
        assert_eq!(disk_half_width(5, 3), 4);
        assert_eq!(disk_half_width(5, 4), 3);
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = disk(20, 20, 10.0, 10.0, 6.0);
        assert_eq!(erode_disk(&m, 0), m);
    }

    #[test]
    fn square_erodes_by_radius() {
        let m = BinaryMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        let e = erode_disk(&m, 2);
        let want = BinaryMask::from_fn(20, 20, |x, y| (7..13).contains(&x) && (7..13).contains(&y));
        assert_eq!(e, want);
    }

    #[test]
    fn border_does_not_erode() {
        let m = BinaryMask::from_fn(10, 10, |_, _| true);
        assert_eq!(erode_disk(&m, 3), m);
    }

    #[test]
    fn components_eight_connected() {
        let m = BinaryMask::from_bits(
            4,
            3,
            vec![
                true, false, false, true, //
                false, true, false, false, //
                false, false, false, true,
            ],
        )
        .unwrap();
        let l = components(&m);
        assert_eq!(l.count(), 3);
        assert_eq!(l.get(0, 0), l.get(1, 1));
        assert_ne!(l.get(3, 0), l.get(3, 2));
    }

    #[test]
    fn rectangle_minor_axis() {
        let m = BinaryMask::from_fn(30, 20, |x, y| (5..15).contains(&x) && (8..12).contains(&y));
        let s = &region_stats(&components(&m))[0];
        // Width 4 bar: variance (16 - 1) / 12.
        assert!((s.minor_axis_length() - 4.0 * (15.0f64 / 12.0).sqrt()).abs() < 1e-9);
        assert!((s.major_axis_length() - 4.0 * (99.0f64 / 12.0).sqrt()).abs() < 1e-9);
        assert_eq!(auto_disk_radius(&m).unwrap(), 1);
    }

    #[test]
    fn equal_disks_share_radius() {
        let one = disk(40, 40, 10.0, 10.0, 5.0);
        let two = BinaryMask::from_fn(40, 40, |x, y| one.get(x, y) || (x >= 20 && one.get(x - 20, y)));
        assert_eq!(auto_disk_radius(&one).unwrap(), auto_disk_radius(&two).unwrap());
        assert!(matches!(
            auto_disk_radius(&BinaryMask::new(5, 5)),
            Err(RasterError::EmptyMask)
        ));
    }
}
