//! Plant detections, YOLO-style label files, IoU and greedy NMS.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{BBox, Point2};

/// Default IoU suppression threshold.
pub const DEFAULT_IOU_THRESH: f64 = 0.25;
/// Default minimum confidence kept by NMS.
pub const DEFAULT_CONF_THRESH: f64 = 0.25;

const RANGE_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {field} = {value} is outside [0, 1]")]
    Range {
        line: usize,
        field: &'static str,
        value: f64,
    },
}

/// Number of plants a single box stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum PlantClass {
    Single = 0,
    Double = 1,
    Triple = 2,
}

impl PlantClass {
    pub const ALL: [PlantClass; 3] = [PlantClass::Single, PlantClass::Double, PlantClass::Triple];

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(PlantClass::Single),
            1 => Some(PlantClass::Double),
            2 => Some(PlantClass::Triple),
            _ => None,
        }
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn multiplicity(self) -> u32 {
        self as u32 + 1
    }
}

/// One classed, scored, axis-aligned box.
///
/// `source` identifies the frame or patch the record came from and `seq` its
/// position within that source; together they order equal-confidence boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub cls: PlantClass,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub conf: f64,
    pub source: u32,
    pub seq: u32,
}

impl Detection {
    pub fn new(cls: PlantClass, cx: f64, cy: f64, w: f64, h: f64, conf: f64) -> Self {
        Self {
            cls,
            cx,
            cy,
            w,
            h,
            conf,
            source: 0,
            seq: 0,
        }
    }

    pub fn from_bbox(cls: PlantClass, b: &BBox, conf: f64) -> Self {
        let c = b.center();
        Self::new(cls, c.x, c.y, b.w, b.h, conf)
    }

    pub fn with_source(mut self, source: u32, seq: u32) -> Self {
        self.source = source;
        self.seq = seq;
        self
    }

    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.w, self.h)
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn set_bbox(&mut self, b: &BBox) {
        let c = b.center();
        self.cx = c.x;
        self.cy = c.y;
        self.w = b.w;
        self.h = b.h;
    }

    pub fn translated(mut self, dx: f64, dy: f64) -> Self {
        self.cx += dx;
        self.cy += dy;
        self
    }

    pub fn multiplicity(&self) -> u32 {
        self.cls.multiplicity()
    }
}

/// Total multiplicity of a detection set.
pub fn total_plants(dets: &[Detection]) -> u64 {
    dets.iter().map(|d| d.multiplicity() as u64).sum()
}

/// Intersection over union of two boxes treated as closed real rectangles.
pub fn iou(a: &Detection, b: &Detection) -> f64 {
    box_iou(&a.bbox(), &b.bbox())
}

pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x1().min(b.x1()) - a.x.max(b.x);
    let ih = a.y1().min(b.y1()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Priority order used by NMS: descending confidence, then ascending
/// `(source, seq)`.
pub fn priority_cmp(a: &Detection, b: &Detection) -> Ordering {
    b.conf
        .total_cmp(&a.conf)
        .then(a.source.cmp(&b.source))
        .then(a.seq.cmp(&b.seq))
}

/// Uniform grid over kept boxes. Boxes spanning too many cells go to a
/// side list that every query scans.
struct KeptIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
    large: Vec<usize>,
}

const MAX_CELLS_PER_BOX: i64 = 64;

impl KeptIndex {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            cells: HashMap::new(),
            large: Vec::new(),
        }
    }

    fn span(&self, b: &BBox) -> (i64, i64, i64, i64) {
        (
            (b.x / self.cell).floor() as i64,
            (b.y / self.cell).floor() as i64,
            (b.x1() / self.cell).floor() as i64,
            (b.y1() / self.cell).floor() as i64,
        )
    }

    fn insert(&mut self, idx: usize, b: &BBox) {
        let (cx0, cy0, cx1, cy1) = self.span(b);
        if (cx1 - cx0 + 1).saturating_mul(cy1 - cy0 + 1) > MAX_CELLS_PER_BOX {
            self.large.push(idx);
            return;
        }
        for gy in cy0..=cy1 {
            for gx in cx0..=cx1 {
                self.cells.entry((gx, gy)).or_default().push(idx);
            }
        }
    }

    fn any_overlapping(&self, b: &BBox, mut hit: impl FnMut(usize) -> bool) -> bool {
        if self.large.iter().any(|&i| hit(i)) {
            return true;
        }
        let (cx0, cy0, cx1, cy1) = self.span(b);
        if (cx1 - cx0 + 1).saturating_mul(cy1 - cy0 + 1) > MAX_CELLS_PER_BOX {
            // A huge query box: walk the buckets instead of its cells.
            return self.cells.values().flatten().any(|&i| hit(i));
        }
        for gy in cy0..=cy1 {
            for gx in cx0..=cx1 {
                if let Some(list) = self.cells.get(&(gx, gy)) {
                    if list.iter().any(|&i| hit(i)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Greedy class-agnostic non-maximum suppression.
///
/// Drops records with `conf < conf_thresh`, then walks the rest in
/// [`priority_cmp`] order, keeping a box unless its IoU with an already
/// kept box is strictly greater than `iou_thresh`. The output is in
/// priority order.
pub fn nms(dets: &[Detection], iou_thresh: f64, conf_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<Detection> = dets.iter().filter(|d| d.conf >= conf_thresh).copied().collect();
    order.sort_by(priority_cmp);
    if order.is_empty() {
        return order;
    }

    let mut sizes: Vec<f64> = order.iter().map(|d| d.w.max(d.h)).collect();
    let mid = sizes.len() / 2;
    let (_, median, _) = sizes.select_nth_unstable_by(mid, f64::total_cmp);
    let cell = if median.is_finite() && *median > 0.0 {
        2.0 * *median
    } else {
        1.0
    };

    let mut kept: Vec<Detection> = Vec::new();
    let mut kept_boxes: Vec<BBox> = Vec::new();
    let mut index = KeptIndex::new(cell);
    for d in order {
        let b = d.bbox();
        let suppressed = index.any_overlapping(&b, |k| box_iou(&kept_boxes[k], &b) > iou_thresh);
        if !suppressed {
            index.insert(kept.len(), &b);
            kept_boxes.push(b);
            kept.push(d);
        }
    }
    kept
}

fn parse_field(tok: &str, line: usize, name: &str) -> Result<f64, LabelError> {
    let v: f64 = tok.parse().map_err(|_| LabelError::Parse {
        line,
        msg: format!("{name}: not a number: {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(LabelError::Parse {
            line,
            msg: format!("{name}: non-finite value {tok:?}"),
        });
    }
    Ok(v)
}

fn unit_range(v: f64, line: usize, field: &'static str) -> Result<f64, LabelError> {
    if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
        return Err(LabelError::Range { line, field, value: v });
    }
    Ok(v.clamp(0.0, 1.0))
}

/// Parses a label file with normalized `class cx cy w h [conf]` records and
/// denormalizes it to an `img_w` x `img_h` image. `seq` is set to the
/// zero-based record index.
pub fn parse_labels(text: &str, img_w: f64, img_h: f64) -> Result<Vec<Detection>, LabelError> {
    parse_labels_in(text, &BBox::new(0.0, 0.0, img_w, img_h))
}

/// Like [`parse_labels`], with coordinates normalized to an arbitrary
/// extent rectangle.
pub fn parse_labels_in(text: &str, extent: &BBox) -> Result<Vec<Detection>, LabelError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.len() != 5 && toks.len() != 6 {
            return Err(LabelError::Parse {
                line,
                msg: format!("expected 5 or 6 fields, found {}", toks.len()),
            });
        }
        let cls = toks[0]
            .parse::<u8>()
            .ok()
            .and_then(PlantClass::from_id)
            .ok_or_else(|| LabelError::Parse {
                line,
                msg: format!("class id must be 0, 1 or 2, found {:?}", toks[0]),
            })?;
        let cx = unit_range(parse_field(toks[1], line, "cx")?, line, "cx")?;
        let cy = unit_range(parse_field(toks[2], line, "cy")?, line, "cy")?;
        let w = unit_range(parse_field(toks[3], line, "w")?, line, "w")?;
        let h = unit_range(parse_field(toks[4], line, "h")?, line, "h")?;
        if w <= 0.0 {
            return Err(LabelError::Range {
                line,
                field: "w",
                value: w,
            });
        }
        if h <= 0.0 {
            return Err(LabelError::Range {
                line,
                field: "h",
                value: h,
            });
        }
        let conf = match toks.get(5) {
            Some(t) => unit_range(parse_field(t, line, "conf")?, line, "conf")?,
            None => 1.0,
        };
        let seq = out.len() as u32;
        out.push(
            Detection::new(
                cls,
                extent.x + cx * extent.w,
                extent.y + cy * extent.h,
                w * extent.w,
                h * extent.h,
                conf,
            )
            .with_source(0, seq),
        );
    }
    Ok(out)
}

/// Writes detections in label-file format relative to an `img_w` x `img_h`
/// image, six decimals per field, confidence always present.
pub fn format_labels(dets: &[Detection], img_w: f64, img_h: f64) -> String {
    format_labels_in(dets, &BBox::new(0.0, 0.0, img_w, img_h))
}

/// Writes detections normalized to `extent`. Values are clamped to [0, 1].
pub fn format_labels_in(dets: &[Detection], extent: &BBox) -> String {
    let mut s = String::with_capacity(dets.len() * 48);
    for d in dets {
        let n = |v: f64| v.clamp(0.0, 1.0);
        let _ = writeln!(
            s,
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.cls.id(),
            n((d.cx - extent.x) / extent.w),
            n((d.cy - extent.y) / extent.h),
            n(d.w / extent.w),
            n(d.h / extent.h),
            n(d.conf)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corner_box(x: f64, y: f64, w: f64, h: f64, conf: f64) -> Detection {
        Detection::from_bbox(PlantClass::Single, &BBox::new(x, y, w, h), conf)
    }

    #[test]
    fn class_multiplicity() {
        for c in PlantClass::ALL {
            assert_eq!(c.multiplicity(), c.id() as u32 + 1);
            assert_eq!(PlantClass::from_id(c.id()), Some(c));
        }
        assert_eq!(PlantClass::from_id(3), None);
    }

    #[test]
    fn parse_examples() {
        let d = parse_labels("0 0.5 0.5 0.1 0.2", 1000.0, 500.0).unwrap();
        assert_eq!(d.len(), 1);
        let d = d[0];
        assert_eq!(d.cls, PlantClass::Single);
        assert!((d.cx - 500.0).abs() < 1e-9 && (d.cy - 250.0).abs() < 1e-9);
        assert!((d.w - 100.0).abs() < 1e-9 && (d.h - 100.0).abs() < 1e-9);
        assert_eq!(d.conf, 1.0);

        let d = parse_labels("2 0.25 0.75 0.05 0.05 0.9\n", 640.0, 640.0).unwrap()[0];
        assert_eq!(d.cls, PlantClass::Triple);
        assert!((d.cx - 160.0).abs() < 1e-9 && (d.cy - 480.0).abs() < 1e-9);
        assert!((d.w - 32.0).abs() < 1e-9 && (d.h - 32.0).abs() < 1e-9);
        assert_eq!(d.conf, 0.9);
    }

    #[test]
    fn parse_keeps_line_order_and_skips_blanks() {
        let d = parse_labels("0 0.1 0.1 0.1 0.1\n\n1 0.9 0.9 0.1 0.1 0.5\n", 100.0, 100.0).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].seq, 0);
        assert_eq!(d[1].seq, 1);
        assert_eq!(d[1].cls, PlantClass::Double);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_labels("0 0.5 0.5 0.1", 10.0, 10.0),
            Err(LabelError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_labels("0 0.5 0.5 0.1 0.1\n7 0.5 0.5 0.1 0.1", 10.0, 10.0),
            Err(LabelError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_labels("0 0.5 abc 0.1 0.1", 10.0, 10.0),
            Err(LabelError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_labels("0 1.01 0.5 0.1 0.1", 10.0, 10.0),
            Err(LabelError::Range { field: "cx", .. })
        ));
        assert!(matches!(
            parse_labels("0 0.5 0.5 0.1 0.1 1.5", 10.0, 10.0),
            Err(LabelError::Range { field: "conf", .. })
        ));
        assert!(matches!(
            parse_labels("0 0.5 0.5 0 0.1", 10.0, 10.0),
            Err(LabelError::Range { field: "w", .. })
        ));
        // Slack of 1e-6 is tolerated and clamped.
        let d = parse_labels("0 1.0000005 0.5 0.1 0.1", 10.0, 10.0).unwrap();
        assert_eq!(d[0].cx, 10.0);
    }

    #[test]
    fn format_is_bit_exact() {
        let d = Detection::new(PlantClass::Double, 160.0, 480.0, 32.0, 32.0, 0.9);
        assert_eq!(
            format_labels(&[d], 640.0, 640.0),
            "1 0.250000 0.750000 0.050000 0.050000 0.900000\n"
        );
    }

    #[test]
    fn iou_examples() {
        let a = corner_box(0.0, 0.0, 10.0, 10.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        let far = corner_box(50.0, 50.0, 10.0, 10.0, 1.0);
        assert_eq!(iou(&a, &far), 0.0);
        let b = corner_box(5.0, 0.0, 10.0, 10.0, 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        // Touching edges do not overlap.
        let t = corner_box(10.0, 0.0, 10.0, 10.0, 1.0);
        assert_eq!(iou(&a, &t), 0.0);
    }

    #[test]
    fn nms_examples() {
        let a = corner_box(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = corner_box(0.0, 0.0, 10.0, 10.0, 0.8);
        let out = nms(&[b, a], DEFAULT_IOU_THRESH, DEFAULT_CONF_THRESH);
        assert_eq!(out, vec![a]);

        let c = corner_box(100.0, 0.0, 10.0, 10.0, 0.5);
        let out = nms(&[c, a], DEFAULT_IOU_THRESH, DEFAULT_CONF_THRESH);
        assert_eq!(out, vec![a, c]);

        assert!(nms(&[], 0.25, 0.25).is_empty());
        let low = corner_box(0.0, 0.0, 10.0, 10.0, 0.1);
        assert!(nms(&[low], 0.25, 0.25).is_empty());
    }

    #[test]
    fn nms_strict_threshold() {
        // IoU exactly 1/3 at threshold 1/3 is not suppressed.
        let a = corner_box(0.0, 0.0, 10.0, 10.0, 0.9);
        let b = corner_box(5.0, 0.0, 10.0, 10.0, 0.8);
        let t = iou(&a, &b);
        assert_eq!(nms(&[a, b], t, 0.0).len(), 2);
        assert_eq!(nms(&[a, b], t - 1e-9, 0.0).len(), 1);
    }

    #[test]
    fn nms_tie_break_by_source_then_seq() {
        let a = corner_box(0.0, 0.0, 10.0, 10.0, 0.7).with_source(2, 0);
        let b = corner_box(1.0, 0.0, 10.0, 10.0, 0.7).with_source(1, 5);
        let c = corner_box(2.0, 0.0, 10.0, 10.0, 0.7).with_source(1, 3);
        let out = nms(&[a, b, c], 0.25, 0.25);
        assert_eq!(out, vec![c]);
    }

    #[test]
    fn nms_with_giant_box() {
        let giant = corner_box(-1e5, -1e5, 2e5, 2e5, 0.5);
        let small = corner_box(0.0, 0.0, 10.0, 10.0, 0.9);
        let other = corner_box(500.0, 0.0, 10.0, 10.0, 0.8);
        let out = nms(&[giant, small, other], 0.25, 0.25);
        assert_eq!(out, vec![small, other, giant]);
    }
}
