//! Range and row segmentation from centroid histograms, and per-row counts.
//!
//! Detections are expected in the standardized orientation: rows run top
//! to bottom, ranges are stacked vertically and separated by horizontal
//! alleys. Ranges therefore come from the histogram of centroid `y`, rows
//! within a range from the histogram of centroid `x`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detections::Detection;
use crate::geometry::BBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("no detections inside the extent")]
    EmptyInput,
    #[error("histogram bin must be > 0 and the smoothing window odd, got bin {bin}, window {window}")]
    BadParams { bin: f64, window: usize },
    #[error("no ranges found; the field may have no alleys (try production mode)")]
    NoRangesFound,
    #[error("no rows found in range {range}")]
    NoRowsFound { range: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FieldMode {
    /// Rows split into ranges by unplanted alleys.
    #[default]
    Nursery,
    /// Continuous rows, counted over their full length.
    Production,
}

impl std::str::FromStr for FieldMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nursery" => Ok(FieldMode::Nursery),
            "production" => Ok(FieldMode::Production),
            other => Err(format!("unknown field mode {other:?} (expected nursery or production)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutConfig {
    /// Histogram bin width in pixels.
    pub bin: f64,
    /// Moving-average window in bins, odd.
    pub window: usize,
    /// Fraction of the smoothed profile maximum separating signal from gap.
    pub prominence: f64,
    /// A dip inside a signal run splits it in two when it falls below this
    /// fraction of the lower of the maxima on either side.
    pub valley_ratio: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            bin: 8.0,
            window: 9,
            prominence: 0.10,
            valley_ratio: 0.5,
        }
    }
}

/// Half-open pixel interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Smoothed 1-D centroid profile with its peaks and the gaps between them.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakProfile {
    pub origin: f64,
    pub bin: f64,
    pub smoothed: Vec<f64>,
    /// Peak positions in pixels, ascending.
    pub peaks: Vec<f64>,
    /// Midpoints of the gaps between consecutive peaks.
    pub gaps: Vec<f64>,
    /// Set when the profile never drops below the floor, i.e. there is no
    /// peak/gap structure at all.
    pub unstructured: bool,
}

/// Bins positions in `[origin, origin + extent)`, smooths the counts with a
/// uniform window of `cfg.window` bins and splits the profile into runs
/// above `cfg.prominence * max`. A run is further cut at any dip deeper
/// than `cfg.valley_ratio` of the lower maximum beside it. Each run is one
/// peak, located at its maximum; the stretch between two runs yields one
/// gap at its midpoint. A single run covering the whole extent has no
/// contrast and gives no peaks.
pub fn histogram_peaks(
    positions: &[f64],
    origin: f64,
    extent: f64,
    cfg: &LayoutConfig,
) -> Result<PeakProfile, LayoutError> {
    let LayoutConfig {
        bin,
        window,
        prominence,
        valley_ratio,
    } = *cfg;
    if !(bin > 0.0) || window == 0 || window % 2 == 0 {
        return Err(LayoutError::BadParams { bin, window });
    }
    let nbins = ((extent / bin).ceil() as usize).max(1);
    let mut counts = vec![0.0f64; nbins];
    let mut any = false;
    for &p in positions {
        let t = (p - origin) / bin;
        if t >= 0.0 && (t as usize) < nbins && p <= origin + extent {
            counts[t as usize] += 1.0;
            any = true;
        } else if p == origin + extent {
            counts[nbins - 1] += 1.0;
            any = true;
        }
    }
    if !any {
        return Err(LayoutError::EmptyInput);
    }

    let half = window / 2;
    let mut prefix = vec![0.0; nbins + 1];
    for (i, c) in counts.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    let smoothed: Vec<f64> = (0..nbins)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(nbins);
            (prefix[hi] - prefix[lo]) / window as f64
        })
        .collect();
    let max = smoothed.iter().copied().fold(0.0, f64::max);
    let floor = prominence * max;

    // Runs of bins strictly above the floor.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < nbins {
        if smoothed[i] > floor {
            let s = i;
            while i < nbins && smoothed[i] > floor {
                i += 1;
            }
            runs.push((s, i - 1));
        } else {
            i += 1;
        }
    }

    let pos = |b: f64| origin + b * bin;
    let unstructured = runs.len() == 1 && runs[0] == (0, nbins - 1);
    let runs: Vec<(usize, usize)> = runs
        .into_iter()
        .flat_map(|r| split_at_valleys(&smoothed, r, valley_ratio))
        .collect();
    let (peaks, gaps) = if unstructured {
        (Vec::new(), Vec::new())
    } else {
        let peaks = runs
            .iter()
            .map(|&(s, e)| {
                let top = smoothed[s..=e].iter().copied().fold(f64::MIN, f64::max);
                let first = (s..=e).find(|&k| smoothed[k] == top).unwrap();
                let mut last = first;
                while last < e && smoothed[last + 1] == top {
                    last += 1;
                }
                pos((first + last) as f64 / 2.0 + 0.5)
            })
            .collect();
        let gaps = runs
            .windows(2)
            .map(|w| {
                let (g0, g1) = (w[0].1 + 1, w[1].0 - 1);
                pos((g0 + g1 + 1) as f64 / 2.0)
            })
            .collect();
        (peaks, gaps)
    };
    Ok(PeakProfile {
        origin,
        bin,
        smoothed,
        peaks,
        gaps,
        unstructured,
    })
}

/// Recursively cuts `run` at its deepest dip below `ratio` times the lower
/// of the maxima on either side. The dip's flat bottom is left out of both
/// halves so it becomes the gap.
fn split_at_valleys(sm: &[f64], run: (usize, usize), ratio: f64) -> Vec<(usize, usize)> {
    let (s, e) = run;
    if e < s + 2 {
        return vec![run];
    }
    let n = e - s + 1;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    for k in 0..n {
        left[k] = if k == 0 { sm[s] } else { left[k - 1].max(sm[s + k]) };
        let j = n - 1 - k;
        right[j] = if k == 0 { sm[e] } else { right[j + 1].max(sm[s + j]) };
    }
    let mut best: Option<(f64, usize)> = None;
    for k in 1..n - 1 {
        let lower = left[k].min(right[k]);
        let depth = sm[s + k] / lower;
        if sm[s + k] < ratio * lower && best.is_none_or(|(d, _)| depth < d) {
            best = Some((depth, k));
        }
    }
    let Some((_, k)) = best else {
        return vec![run];
    };
    let v = s + k;
    let (mut lo, mut hi) = (v, v);
    while lo > s && sm[lo - 1] == sm[v] {
        lo -= 1;
    }
    while hi < e && sm[hi + 1] == sm[v] {
        hi += 1;
    }
    let mut out = Vec::new();
    if lo > s {
        out.extend(split_at_valleys(sm, (s, lo - 1), ratio));
    }
    if hi < e {
        out.extend(split_at_valleys(sm, (hi + 1, e), ratio));
    }
    out
}

fn intervals_from_gaps(start: f64, end: f64, gaps: &[f64]) -> Vec<Interval> {
    let mut bounds = Vec::with_capacity(gaps.len() + 2);
    bounds.push(start);
    bounds.extend_from_slice(gaps);
    bounds.push(end);
    bounds.windows(2).map(|w| Interval::new(w[0], w[1])).collect()
}

/// Range intervals along `y`, split at the gaps of the centroid-`y`
/// profile; the outer bounds are the extent edges.
pub fn detect_ranges(dets: &[Detection], extent: &BBox, cfg: &LayoutConfig) -> Result<Vec<Interval>, LayoutError> {
    let ys: Vec<f64> = dets.iter().map(|d| d.cy).collect();
    let prof = histogram_peaks(&ys, extent.y, extent.h, cfg)?;
    if prof.peaks.is_empty() {
        return Err(LayoutError::NoRangesFound);
    }
    Ok(intervals_from_gaps(extent.y, extent.y1(), &prof.gaps))
}

/// Row intervals along `x` for the detections of one range.
pub fn detect_rows(dets: &[Detection], extent: &BBox, cfg: &LayoutConfig) -> Result<Vec<Interval>, LayoutError> {
    let xs: Vec<f64> = dets.iter().map(|d| d.cx).collect();
    let prof = histogram_peaks(&xs, extent.x, extent.w, cfg)?;
    if prof.peaks.is_empty() {
        return Err(LayoutError::NoRowsFound { range: 0 });
    }
    Ok(intervals_from_gaps(extent.x, extent.x1(), &prof.gaps))
}

/// Ordered ranges (top to bottom), each with ordered rows (left to right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldLayout {
    /// Estimated row direction in the source image, degrees.
    pub theta: f64,
    /// Counter-clockwise rotation applied before segmentation, degrees.
    pub rotation: f64,
    pub mode: FieldMode,
    /// Oriented canvas `[x, y, w, h]` the intervals live in.
    pub extent: [f64; 4],
    pub ranges: Vec<RangeLayout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeLayout {
    pub start: f64,
    pub end: f64,
    pub rows: Vec<Interval>,
}

impl FieldLayout {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn row_count(&self) -> usize {
        self.ranges.iter().map(|r| r.rows.len()).sum()
    }
}

fn in_interval(v: f64, start: f64, end: f64, last: bool) -> bool {
    v >= start && (v < end || (last && v <= end))
}

fn dets_in_range(dets: &[Detection], r: &Interval, last: bool) -> Vec<Detection> {
    dets.iter()
        .filter(|d| in_interval(d.cy, r.start, r.end, last))
        .copied()
        .collect()
}

fn build_layout(
    dets: &[Detection],
    extent: &BBox,
    ranges: Vec<Interval>,
    theta: f64,
    rotation: f64,
    mode: FieldMode,
    cfg: &LayoutConfig,
) -> Result<FieldLayout, LayoutError> {
    let n = ranges.len();
    let mut out = Vec::with_capacity(n);
    for (k, r) in ranges.into_iter().enumerate() {
        let inside = dets_in_range(dets, &r, k + 1 == n);
        let rows = match detect_rows(&inside, extent, cfg) {
            Ok(rows) => rows,
            Err(LayoutError::NoRowsFound { .. }) | Err(LayoutError::EmptyInput) => {
                return Err(LayoutError::NoRowsFound { range: k })
            }
            Err(e) => return Err(e),
        };
        out.push(RangeLayout {
            start: r.start,
            end: r.end,
            rows,
        });
    }
    Ok(FieldLayout {
        theta,
        rotation,
        mode,
        extent: [extent.x, extent.y, extent.w, extent.h],
        ranges: out,
    })
}

/// Ranges first, then rows inside each range.
pub fn nursery_layout(
    dets: &[Detection],
    extent: &BBox,
    theta: f64,
    rotation: f64,
    cfg: &LayoutConfig,
) -> Result<FieldLayout, LayoutError> {
    let ranges = detect_ranges(dets, extent, cfg)?;
    build_layout(dets, extent, ranges, theta, rotation, FieldMode::Nursery, cfg)
}

/// One range spanning the whole extent; rows over the full field.
pub fn production_mode_layout(
    dets: &[Detection],
    extent: &BBox,
    theta: f64,
    rotation: f64,
    cfg: &LayoutConfig,
) -> Result<FieldLayout, LayoutError> {
    if dets.is_empty() {
        return Err(LayoutError::EmptyInput);
    }
    let whole = vec![Interval::new(extent.y, extent.y1())];
    build_layout(dets, extent, whole, theta, rotation, FieldMode::Production, cfg)
}

pub fn field_layout(
    mode: FieldMode,
    dets: &[Detection],
    extent: &BBox,
    theta: f64,
    rotation: f64,
    cfg: &LayoutConfig,
) -> Result<FieldLayout, LayoutError> {
    match mode {
        FieldMode::Nursery => nursery_layout(dets, extent, theta, rotation, cfg),
        FieldMode::Production => production_mode_layout(dets, extent, theta, rotation, cfg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowCount {
    pub range_idx: usize,
    pub row_idx: usize,
    /// Sum of class multiplicities over `detections`.
    pub count: u64,
    pub detections: Vec<Detection>,
}

/// Per-row counts in reading order plus everything no row claimed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountReport {
    pub rows: Vec<RowCount>,
    pub unassigned: Vec<Detection>,
}

impl CountReport {
    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn unassigned_plants(&self) -> u64 {
        crate::detections::total_plants(&self.unassigned)
    }

    pub fn get(&self, range_idx: usize, row_idx: usize) -> Option<&RowCount> {
        self.rows
            .iter()
            .find(|r| r.range_idx == range_idx && r.row_idx == row_idx)
    }

    /// `range,row,count` with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("range,row,count\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.range_idx, r.row_idx, r.count));
        }
        s
    }
}

/// Assigns each detection to the range and row containing its center.
/// Intervals are half-open except the last of each list, which also holds
/// its end point.
pub fn count_rows(layout: &FieldLayout, dets: &[Detection]) -> CountReport {
    let mut rows: Vec<RowCount> = Vec::new();
    let mut offsets = Vec::with_capacity(layout.ranges.len());
    for (ri, r) in layout.ranges.iter().enumerate() {
        offsets.push(rows.len());
        for ci in 0..r.rows.len() {
            rows.push(RowCount {
                range_idx: ri,
                row_idx: ci,
                count: 0,
                detections: Vec::new(),
            });
        }
    }
    let mut unassigned = Vec::new();
    let nr = layout.ranges.len();
    for d in dets {
        let slot = layout.ranges.iter().enumerate().find_map(|(ri, r)| {
            if !in_interval(d.cy, r.start, r.end, ri + 1 == nr) {
                return None;
            }
            let nc = r.rows.len();
            r.rows
                .iter()
                .position(|c| in_interval(d.cx, c.start, c.end, false))
                .or_else(|| {
                    (nc > 0 && in_interval(d.cx, r.rows[nc - 1].start, r.rows[nc - 1].end, true)).then_some(nc - 1)
                })
                .map(|ci| offsets[ri] + ci)
        });
        match slot {
            Some(i) => {
                rows[i].count += d.multiplicity() as u64;
                rows[i].detections.push(*d);
            }
            None => unassigned.push(*d),
        }
    }
    CountReport { rows, unassigned }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcfg(bin: f64, window: usize, prominence: f64) -> LayoutConfig {
        LayoutConfig {
            bin,
            window,
            prominence,
            ..LayoutConfig::default()
        }
    }
    use crate::detections::PlantClass;

    fn at(x: f64, y: f64, cls: PlantClass) -> Detection {
        Detection::new(cls, x, y, 6.0, 6.0, 0.9)
    }

    #[test]
    fn two_clusters() {
        let mut pos = Vec::new();
        for k in -3..=3 {
            pos.push(100.0 + k as f64);
            pos.push(300.0 + k as f64);
        }
        let p = histogram_peaks(&pos, 0.0, 400.0, &pcfg(4.0, 5, 0.1)).unwrap();
        assert_eq!(p.peaks.len(), 2);
        assert!((p.peaks[0] - 100.0).abs() <= 4.0 && (p.peaks[1] - 300.0).abs() <= 4.0);
        assert_eq!(p.gaps.len(), 1);
        assert!((p.gaps[0] - 200.0).abs() <= 4.0);
    }

    #[test]
    fn single_cluster_and_errors() {
        let p = histogram_peaks(&[50.0, 51.0, 52.0], 0.0, 200.0, &pcfg(4.0, 3, 0.1)).unwrap();
        assert_eq!(p.peaks.len(), 1);
        assert!(p.gaps.is_empty());
        assert_eq!(
            histogram_peaks(&[], 0.0, 10.0, &pcfg(1.0, 3, 0.1)),
            Err(LayoutError::EmptyInput)
        );
        assert_eq!(
            histogram_peaks(&[500.0], 0.0, 10.0, &pcfg(1.0, 3, 0.1)),
            Err(LayoutError::EmptyInput)
        );
        assert!(matches!(
            histogram_peaks(&[1.0], 0.0, 10.0, &pcfg(1.0, 4, 0.1)),
            Err(LayoutError::BadParams { .. })
        ));
        assert!(matches!(
            histogram_peaks(&[1.0], 0.0, 10.0, &pcfg(0.0, 3, 0.1)),
            Err(LayoutError::BadParams { .. })
        ));
    }

    #[test]
    fn count_examples() {
        let layout = FieldLayout {
            theta: 90.0,
            rotation: 0.0,
            mode: FieldMode::Production,
            extent: [0.0, 0.0, 100.0, 100.0],
            ranges: vec![RangeLayout {
                start: 0.0,
                end: 100.0,
                rows: vec![Interval::new(0.0, 50.0), Interval::new(50.0, 100.0)],
            }],
        };
        let mut dets: Vec<Detection> = (0..10)
            .map(|i| at(20.0, 5.0 + 8.0 * i as f64, PlantClass::Single))
            .collect();
        dets.push(at(20.0, 95.0, PlantClass::Double));
        dets.push(at(70.0, 50.0, PlantClass::Triple));
        dets.push(at(170.0, 50.0, PlantClass::Single));
        let rep = count_rows(&layout, &dets);
        assert_eq!(rep.rows[0].count, 12);
        assert_eq!(rep.rows[1].count, 3);
        assert_eq!(rep.unassigned.len(), 1);
        assert_eq!(rep.to_csv(), "range,row,count\n0,0,12\n0,1,3\n");
        // End points of the last interval belong to it.
        let edge = count_rows(&layout, &[at(100.0, 100.0, PlantClass::Single)]);
        assert_eq!(edge.rows[1].count, 1);
    }

    #[test]
    fn production_layout_rejects_empty() {
        let e = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(
            production_mode_layout(&[], &e, 90.0, 0.0, &LayoutConfig::default()),
            Err(LayoutError::EmptyInput)
        );
        assert_eq!(
            detect_ranges(&[], &e, &LayoutConfig::default()),
            Err(LayoutError::EmptyInput)
        );
    }

    #[test]
    fn layout_json_round_trip() {
        let layout = FieldLayout {
            theta: 91.0,
            rotation: -1.0,
            mode: FieldMode::Nursery,
            extent: [0.0, 0.0, 10.0, 20.0],
            ranges: vec![RangeLayout {
                start: 0.0,
                end: 20.0,
                rows: vec![Interval::new(0.0, 10.0)],
            }],
        };
        let text = layout.to_json();
        assert!(text.contains("\"nursery\""));
        assert_eq!(FieldLayout::from_json(&text).unwrap(), layout);
    }
}
