use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{components, BinaryMask, LabelMap, RasterError, ScalarMap, NEIGHBORS8};
use crate::geometry::Point2;

/// Regional maxima of a distance map, used as watershed markers.
///
/// A maximum is an 8-connected plateau of equal positive values with no
/// strictly higher neighbor. Each plateau contributes one marker at the
/// plateau pixel closest to its centroid. Markers are then visited by
/// descending value (row-major index on ties) and a marker closer than
/// `min_separation` to an already kept marker of the same connected
/// foreground component is dropped. Every component keeps at least its
/// highest marker.
pub fn regional_maxima(dist: &ScalarMap, min_separation: f64) -> Vec<Point2> {
    let (w, h) = (dist.width(), dist.height());
    let vals = dist.data();
    let n = w * h;
    let mut visited = vec![false; n];
    let mut stack = Vec::new();
    let mut plateau = Vec::new();
    // (value, pixel index of representative)
    let mut candidates: Vec<(f64, usize)> = Vec::new();

    for start in 0..n {
        let v = vals[start];
        if visited[start] || v <= 0.0 {
            continue;
        }
        plateau.clear();
        visited[start] = true;
        stack.push(start);
        let mut is_max = true;
        while let Some(i) = stack.pop() {
            plateau.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let vj = vals[j];
                if vj > v {
                    is_max = false;
                } else if vj == v && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        if !is_max {
            continue;
        }
        let m = plateau.len() as f64;
        let cx = plateau.iter().map(|&i| (i % w) as f64).sum::<f64>() / m;
        let cy = plateau.iter().map(|&i| (i / w) as f64).sum::<f64>() / m;
        let rep = *plateau
            .iter()
            .min_by(|&&a, &&b| {
                let da = ((a % w) as f64 - cx).powi(2) + ((a / w) as f64 - cy).powi(2);
                let db = ((b % w) as f64 - cx).powi(2) + ((b / w) as f64 - cy).powi(2);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap();
        candidates.push((v, rep));
    }

    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let fg = BinaryMask::from_bits(w, h, vals.iter().map(|&v| v > 0.0).collect()).unwrap();
    let comp = components(&fg);
    let mut kept: Vec<(u32, Point2)> = Vec::new();
    for (_, idx) in candidates {
        let p = Point2::new((idx % w) as f64, (idx / w) as f64);
        let c = comp.labels()[idx];
        let crowded = kept.iter().any(|(kc, kp)| *kc == c && kp.distance(&p) < min_separation);
        if !crowded {
            kept.push((c, p));
        }
    }
    kept.into_iter().map(|(_, p)| p).collect()
}

#[derive(PartialEq)]
struct Item {
    value: f64,
    index: usize,
}

impl Eq for Item {}

impl Ord for Item {
    // Highest value first, then lowest pixel index.
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Marker-seeded flooding of the negated distance map inside `mask`.
///
/// Pixels are processed from the highest distance value down, ties broken by
/// row-major index. A pixel takes the label of the region that reaches it
/// first (8-connectivity). Marker `k` yields label `k + 1`; markers that
/// share a pixel with an earlier one are ignored and the labels compacted.
/// Foreground pixels unreachable from any marker stay 0.
pub fn watershed(dist: &ScalarMap, markers: &[Point2], mask: &BinaryMask) -> Result<LabelMap, RasterError> {
    let (w, h) = (mask.width(), mask.height());
    if dist.width() != w || dist.height() != h {
        return Err(RasterError::DimensionMismatch(format!(
            "distance map {}x{} vs mask {w}x{h}",
            dist.width(),
            dist.height()
        )));
    }
    let vals = dist.data();
    let mut labels = vec![0u32; w * h];
    let mut heap = BinaryHeap::new();
    for (k, p) in markers.iter().enumerate() {
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 || !mask.get(x as usize, y as usize) {
            return Err(RasterError::MarkerOffMask {
                index: k,
                x: p.x,
                y: p.y,
            });
        }
        let i = y as usize * w + x as usize;
        if labels[i] != 0 {
            continue;
        }
        labels[i] = k as u32 + 1;
        heap.push(Item {
            value: vals[i],
            index: i,
        });
    }
    while let Some(Item { index, .. }) = heap.pop() {
        let l = labels[index];
        let (x, y) = ((index % w) as isize, (index / w) as isize);
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if labels[j] == 0 && mask.bits()[j] {
                labels[j] = l;
                heap.push(Item {
                    value: vals[j],
                    index: j,
                });
            }
        }
    }
    Ok(LabelMap::from_raw(w, h, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::distance_transform;

    fn disks(w: usize, h: usize, centers: &[(f64, f64)], r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            centers.iter().any(|&(cx, cy)| {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                dx * dx + dy * dy <= r * r
            })
        })
    }

    #[test]
    fn maxima_of_separate_disks() {
        let m = disks(60, 30, &[(15.0, 15.0), (45.0, 15.0)], 8.0);
        let pts = regional_maxima(&distance_transform(&m), 3.0);
        assert_eq!(pts.len(), 2);
        let mut xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 15.0).abs() <= 1.0 && (xs[1] - 45.0).abs() <= 1.0);
        for p in &pts {
            assert!((p.y - 15.0).abs() <= 1.0);
        }
    }

    #[test]
    fn maxima_empty() {
        let m = BinaryMask::new(10, 10);
        assert!(regional_maxima(&distance_transform(&m), 1.0).is_empty());
    }

    #[test]
    fn plateau_gives_one_marker() {
        let d = ScalarMap::from_fn(9, 3, |x, y| if y == 1 && (2..7).contains(&x) { 2.0 } else { 1.0 });
        let pts = regional_maxima(&d, 1.0);
        assert_eq!(pts, vec![Point2::new(4.0, 1.0)]);
    }

    #[test]
    fn single_marker_floods_everything() {
        let m = disks(40, 40, &[(20.0, 20.0)], 10.0);
        let d = distance_transform(&m);
        let l = watershed(&d, &[Point2::new(20.0, 20.0)], &m).unwrap();
        assert_eq!(l.count(), 1);
        for (i, &b) in m.bits().iter().enumerate() {
            assert_eq!(l.labels()[i], b as u32);
        }
    }

    #[test]
    fn no_markers_no_labels() {
        let m = disks(20, 20, &[(10.0, 10.0)], 5.0);
        let l = watershed(&distance_transform(&m), &[], &m).unwrap();
        assert_eq!(l.count(), 0);
        assert!(l.labels().iter().all(|&v| v == 0));
    }

    #[test]
    fn marker_off_mask() {
        let m = disks(20, 20, &[(10.0, 10.0)], 3.0);
        let r = watershed(&distance_transform(&m), &[Point2::new(0.0, 0.0)], &m);
        assert!(matches!(r, Err(RasterError::MarkerOffMask { index: 0, .. })));
    }
}
