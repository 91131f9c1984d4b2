use super::{BinaryMask, ScalarMap};

const INF: f64 = 1e20;

/// Lower envelope of parabolas: exact 1-D squared distance transform.
/// Entries at or above `INF` are not sites.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k: Option<usize> = None;
    for (q, &fq) in f.iter().enumerate() {
        if fq >= INF {
            continue;
        }
        let qf = q as f64;
        loop {
            match k {
                None => {
                    k = Some(0);
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                Some(kk) => {
                    let p = v[kk];
                    let pf = p as f64;
                    let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
                    if s <= z[kk] {
                        k = kk.checked_sub(1);
                        continue;
                    }
                    v[kk + 1] = q;
                    z[kk + 1] = s;
                    z[kk + 2] = f64::INFINITY;
                    k = Some(kk + 1);
                    break;
                }
            }
        }
    }
    let Some(_) = k else {
        out.iter_mut().for_each(|o| *o = INF);
        return;
    };
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[j + 1] < qf {
            j += 1;
        }
        let d = qf - v[j] as f64;
        *o = d * d + f[v[j]];
    }
}

/// Exact Euclidean distance from each foreground pixel center to the
/// nearest background pixel center; background pixels get 0.
///
/// The image is treated as surrounded by background, so a foreground pixel
/// on the border is at distance 1 from the outside.
pub fn distance_transform(mask: &BinaryMask) -> ScalarMap {
    let (w, h) = (mask.width(), mask.height());
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0f64; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                grid[(y + 1) * pw + x + 1] = INF;
            }
        }
    }
    let n = pw.max(ph);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 2];
    for x in 0..pw {
        for y in 0..ph {
            f[y] = grid[y * pw + x];
        }
        edt_1d(&f[..ph], &mut d[..ph], &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = d[y];
        }
    }
    for y in 0..ph {
        let row = &mut grid[y * pw..(y + 1) * pw];
        f[..pw].copy_from_slice(row);
        edt_1d(&f[..pw], &mut d[..pw], &mut v, &mut z);
        row.copy_from_slice(&d[..pw]);
    }
    ScalarMap::from_fn(w, h, |x, y| grid[(y + 1) * pw + x + 1].sqrt())
}

/// Copy of `map` scaled to `[0, 1]` by its maximum; all-zero maps stay zero.
pub fn normalized(map: &ScalarMap) -> ScalarMap {
    let max = map.data().iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return map.clone();
    }
    map.map(|v| v / max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_zero() {
        let d = distance_transform(&BinaryMask::new(6, 4));
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel() {
        let mut m = BinaryMask::new(5, 5);
        m.set(2, 2, true);
        let d = distance_transform(&m);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(d.get(x, y, 0), if (x, y) == (2, 2) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn border_counts_as_background() {
        let m = BinaryMask::from_fn(5, 1, |_, _| true);
        let d = distance_transform(&m);
        assert_eq!(d.data(), &[1.0, 1.0, 1.0, 1.0, 1.0]);
        let m = BinaryMask::from_fn(7, 7, |_, _| true);
        assert_eq!(distance_transform(&m).get(3, 3, 0), 4.0);
    }

    #[test]
    fn diagonal_distance() {
        // Foreground everywhere except one corner pixel; far corner is
        // nearest to the outside border.
        let m = BinaryMask::from_fn(9, 9, |x, y| !(x == 0 && y == 0));
        let d = distance_transform(&m);
        assert_eq!(d.get(1, 1, 0), 2.0f64.sqrt());
        assert_eq!(d.get(4, 4, 0), 5.0);
    }
}
