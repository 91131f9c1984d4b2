//! Synthetic nursery fields and UAV flights with exact ground truth.
//!
//! Fields are generated in the standard orientation: rows run top to
//! bottom, ranges are stacked vertically with horizontal alleys between
//! them. Distances are pixels at 100 px/m.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::detections::{format_labels, Detection, PlantClass};
use crate::evaluation::{format_counts_csv, GroundTruthRow};
use crate::geometry::{BBox, Homography};
use crate::layout::{CountReport, RowCount};
use crate::mosaic::PatchGrid;
use crate::raster::io::write_rgb;
use crate::raster::{RasterError, RgbImage};
use crate::rawframe::{write_frame_dir, FrameRecord, RawFrameError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid field spec: {0}")]
    SpecInvalid(String),
    #[error("invalid flight spec: {0}")]
    FlightInvalid(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Frames(#[from] RawFrameError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub ranges: usize,
    pub rows_per_range: usize,
    /// Planting positions per row, drawn uniformly from `min..=max`.
    pub plants_per_row: (usize, usize),
    pub row_pitch: f64,
    /// Clear distance between the last plant position of one range and the
    /// first of the next. Zero gives continuous production rows.
    pub alley_gap: f64,
    pub plant_spacing: f64,
    /// Uniform positional jitter, pixels, applied to both axes.
    pub position_jitter: f64,
    /// Core radius range of one plant.
    pub plant_radius: (f64, f64),
    pub double_rate: f64,
    pub triple_rate: f64,
    /// Weeds per million pixels. Weeds are small blobs off the plant grid.
    pub weed_density: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            ranges: 3,
            rows_per_range: 4,
            plants_per_row: (20, 20),
            row_pitch: 91.0,
            alley_gap: 122.0,
            plant_spacing: 30.5,
            position_jitter: 2.0,
            plant_radius: (6.0, 7.5),
            double_rate: 0.05,
            triple_rate: 0.0,
            weed_density: 0.0,
            margin: 80.0,
            seed: 0,
        }
    }
}

impl FieldSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::SpecInvalid(m.to_string()));
        if self.ranges == 0 || self.rows_per_range == 0 {
            return bad("ranges and rows_per_range must be >= 1");
        }
        if self.plants_per_row.0 == 0 || self.plants_per_row.0 > self.plants_per_row.1 {
            return bad("plants_per_row must satisfy 1 <= min <= max");
        }
        for (name, p) in [("double_rate", self.double_rate), ("triple_rate", self.triple_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::SpecInvalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.double_rate + self.triple_rate > 1.0 {
            return bad("double_rate + triple_rate must be <= 1");
        }
        if self.ranges > 1 && !(self.alley_gap > self.row_pitch) {
            return bad("alley_gap must exceed row_pitch");
        }
        let (r0, r1) = self.plant_radius;
        if !(r0 > 0.0 && r0 <= r1) {
            return bad("plant_radius must satisfy 0 < min <= max");
        }
        if self.plant_spacing < 4.0 * r1 || self.row_pitch < 8.0 * r1 {
            return bad("plants would overlap: spacing must be >= 4 and pitch >= 8 plant radii");
        }
        if !(self.position_jitter >= 0.0 && self.weed_density >= 0.0 && self.margin >= 0.0) {
            return bad("jitter, weed density and margin must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthField {
    pub image: RgbImage,
    pub truth: CountReport,
    /// One box per planting position in reading order; the class gives the
    /// number of plants at it.
    pub detections: Vec<Detection>,
}

impl SynthField {
    pub fn truth_rows(&self) -> Vec<GroundTruthRow> {
        self.truth.records()
    }
}

const SOIL: [f64; 3] = [122.0, 92.0, 62.0];
const LEAF: [f64; 3] = [58.0, 158.0, 48.0];
const WEED: [f64; 3] = [96.0, 150.0, 60.0];

/// Filled ellipse core plus radial leaf lobes.
#[derive(Debug, Clone)]
struct Blob {
    cx: f64,
    cy: f64,
    core: f64,
    lobes: Vec<(f64, f64, f64)>,
}

impl Blob {
    /// Lobes never point within 60 degrees of `avoid`, the direction of a
    /// neighbouring plant in the same hill.
    fn random(rng: &mut ChaCha8Rng, cx: f64, cy: f64, radius: f64, avoid: Option<f64>) -> Self {
        use std::f64::consts::{PI, TAU};
        let n = rng.random_range(2..=4);
        let phase = rng.random_range(0.0..TAU);
        let lobes = (0..n)
            .map(|k| {
                let mut ang = phase + k as f64 * TAU / n as f64 + rng.random_range(-0.3..0.3);
                if let Some(a) = avoid {
                    let off = (ang - a).rem_euclid(TAU);
                    let off = if off > PI { off - TAU } else { off };
                    if off.abs() < PI / 3.0 {
                        ang = a + PI - off;
                    }
                }
                (
                    ang,
                    radius * rng.random_range(0.8..1.0),
                    radius * rng.random_range(0.35..0.45),
                )
            })
            .collect();
        Blob {
            cx,
            cy,
            core: radius,
            lobes,
        }
    }

    fn reach(&self) -> f64 {
        self.core * 2.0
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        if dx * dx + dy * dy <= self.core * self.core {
            return true;
        }
        self.lobes.iter().any(|&(ang, semi_major, semi_minor)| {
            // Lobe ellipse centered `core` pixels out along `ang`.
            let (s, c) = ang.sin_cos();
            let (lx, ly) = (dx - c * self.core, dy - s * self.core);
            let u = lx * c + ly * s;
            let v = -lx * s + ly * c;
            (u / semi_major).powi(2) + (v / semi_minor).powi(2) <= 1.0
        })
    }
}

/// Paints the union of `blobs` and returns the tight box of the painted
/// pixels, edges on pixel boundaries.
fn paint(img: &mut RgbImage, blobs: &[Blob], color: [f64; 3], rng: &mut ChaCha8Rng) -> Option<BBox> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut x0 = i64::MAX;
    let mut y0 = i64::MAX;
    let mut x1 = i64::MIN;
    let mut y1 = i64::MIN;
    for b in blobs {
        let r = b.reach().ceil() as i64 + 1;
        let (cx, cy) = (b.cx.round() as i64, b.cy.round() as i64);
        x0 = x0.min(cx - r);
        y0 = y0.min(cy - r);
        x1 = x1.max(cx + r);
        y1 = y1.max(cy + r);
    }
    let mut bounds: Option<(i64, i64, i64, i64)> = None;
    for y in y0.max(0)..=y1.min(h - 1) {
        for x in x0.max(0)..=x1.min(w - 1) {
            if !blobs.iter().any(|b| b.contains(x as f64, y as f64)) {
                continue;
            }
            let px = img.pixel_mut(x as usize, y as usize);
            for (c, base) in color.iter().enumerate() {
                px[c] = (base + rng.random_range(-6.0..6.0)).round().clamp(0.0, 255.0) as u8;
            }
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
    }
    bounds.map(|(a, b, c, d)| BBox::from_corners(a as f64 - 0.5, b as f64 - 0.5, c as f64 + 0.5, d as f64 + 0.5))
}

/// Center distance between plants of one hill, in core radii.
pub const HILL_SEPARATION: f64 = 2.4;

fn hill_offsets(cls: PlantClass) -> Vec<(f64, f64)> {
    let half = HILL_SEPARATION / 2.0;
    match cls {
        PlantClass::Single => vec![(0.0, 0.0)],
        PlantClass::Double => vec![(-half, 0.0), (half, 0.0)],
        PlantClass::Triple => {
            let r = HILL_SEPARATION / 3f64.sqrt();
            [0.0f64, 120.0, 240.0]
                .iter()
                .map(|a| (r * a.to_radians().cos(), -r * a.to_radians().sin()))
                .collect()
        }
    }
}

fn field_dims(spec: &FieldSpec) -> (usize, usize, f64) {
    let range_len = (spec.plants_per_row.1 - 1) as f64 * spec.plant_spacing;
    let width = 2.0 * spec.margin + (spec.rows_per_range - 1) as f64 * spec.row_pitch;
    let height = 2.0 * spec.margin
        + spec.ranges as f64 * range_len
        + (spec.ranges - 1) as f64 * spec.alley_gap.max(spec.plant_spacing);
    (width.ceil() as usize, height.ceil() as usize, range_len)
}

/// Renders a field and its ground truth. Deterministic in `spec.seed`.
pub fn generate_field(spec: &FieldSpec) -> Result<SynthField, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h, range_len) = field_dims(spec);
    let mut image = RgbImage::new(w, h, 3);
    for px in image.data_mut().chunks_exact_mut(3) {
        for (c, base) in SOIL.iter().enumerate() {
            px[c] = (base + rng.random_range(-8.0..8.0)).round() as u8;
        }
    }
    let pitch_y = range_len + spec.alley_gap.max(spec.plant_spacing);
    let jitter = spec.position_jitter;
    let mut rows = Vec::new();
    let mut detections = Vec::new();
    for ri in 0..spec.ranges {
        for ci in 0..spec.rows_per_range {
            let x = spec.margin + ci as f64 * spec.row_pitch;
            let n = rng.random_range(spec.plants_per_row.0..=spec.plants_per_row.1);
            let mut row_dets = Vec::with_capacity(n);
            for k in 0..n {
                let mut j = || {
                    if jitter > 0.0 {
                        rng.random_range(-jitter..=jitter)
                    } else {
                        0.0
                    }
                };
                let (px, py) = (
                    x + j(),
                    spec.margin + ri as f64 * pitch_y + k as f64 * spec.plant_spacing + j(),
                );
                let u: f64 = rng.random();
                let cls = if u < spec.triple_rate {
                    PlantClass::Triple
                } else if u < spec.triple_rate + spec.double_rate {
                    PlantClass::Double
                } else {
                    PlantClass::Single
                };
                let radius = rng.random_range(spec.plant_radius.0..=spec.plant_radius.1);
                // Plants sharing a hill sit HILL_SEPARATION core radii
                // apart; doubles across the row, triples in a triangle.
                let offsets = hill_offsets(cls);
                let blobs: Vec<Blob> = offsets
                    .iter()
                    .map(|&(ox, oy)| {
                        // Toward the hill center, in screen angle convention
                        // (y down), matching `Blob::contains`.
                        let avoid = (offsets.len() > 1).then(|| (-oy).atan2(-ox));
                        Blob::random(&mut rng, px + ox * radius, py + oy * radius, radius, avoid)
                    })
                    .collect();
                if let Some(bbox) = paint(&mut image, &blobs, LEAF, &mut rng) {
                    let seq = detections.len() as u32;
                    let d = Detection::from_bbox(cls, &bbox, 1.0).with_source(0, seq);
                    row_dets.push(d);
                    detections.push(d);
                }
            }
            rows.push(RowCount {
                range_idx: ri,
                row_idx: ci,
                count: crate::detections::total_plants(&row_dets),
                detections: row_dets,
            });
        }
    }

    let weeds = (spec.weed_density * (w * h) as f64 / 1e6).round() as usize;
    for _ in 0..weeds {
        // Midway between rows or inside an alley, never on a planting line.
        let gap = rng.random_range(0..=spec.rows_per_range);
        let x = spec.margin + (gap as f64 - 0.5) * spec.row_pitch;
        let y = rng.random_range(spec.margin..(h as f64 - spec.margin).max(spec.margin + 1.0));
        let r = rng.random_range(1.5..2.5);
        let blob = Blob {
            cx: x,
            cy: y,
            core: r,
            lobes: Vec::new(),
        };
        paint(&mut image, &[blob], WEED, &mut rng);
    }

    Ok(SynthField {
        image,
        truth: CountReport {
            rows,
            unassigned: Vec::new(),
        },
        detections,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlightSpec {
    pub frame_size: (usize, usize),
    pub stride: (usize, usize),
    /// Standard deviation of the Gaussian noise added to each pairwise
    /// translation, pixels.
    pub hom_noise_sigma: f64,
    /// Frame confidences are drawn uniformly from `base +- jitter`.
    pub conf_base: f64,
    pub conf_jitter: f64,
    /// `(frame, truth index)` pairs to leave out of that frame's labels.
    pub drop: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Default for FlightSpec {
    fn default() -> Self {
        Self {
            frame_size: (320, 320),
            stride: (160, 160),
            hom_noise_sigma: 0.0,
            conf_base: 0.85,
            conf_jitter: 0.1,
            drop: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthFlight {
    pub frames: Vec<FrameRecord>,
    /// Field-pixel offset of each frame's top-left pixel.
    pub offsets: Vec<(usize, usize)>,
    /// For each frame, the truth index of each of its detections.
    pub truth_index: Vec<Vec<usize>>,
}

impl SynthFlight {
    /// Pixels of every frame cropped from the field.
    pub fn images(&self, field: &RgbImage) -> Vec<RgbImage> {
        self.frames
            .iter()
            .zip(&self.offsets)
            .map(|(f, &(x, y))| field.crop(x, y, f.image_dims.0, f.image_dims.1))
            .collect()
    }
}

fn axis_offsets(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let last = len - size;
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o < last).collect();
    out.push(last);
    out
}

/// Lawnmower flight over `field`: rows of frames top to bottom, alternating
/// direction. Each frame keeps the truth boxes it sees in full, with
/// jittered confidence. Pairwise maps are the exact frame-to-previous
/// translations plus Gaussian noise.
pub fn generate_flight(field: &RgbImage, truth: &[Detection], spec: &FlightSpec) -> Result<SynthFlight, SynthError> {
    let (fw, fh) = spec.frame_size;
    if fw == 0 || fh == 0 || spec.stride.0 == 0 || spec.stride.1 == 0 {
        return Err(SynthError::FlightInvalid(
            "frame size and stride must be positive".into(),
        ));
    }
    if spec.stride.0 >= fw || spec.stride.1 >= fh {
        return Err(SynthError::FlightInvalid(
            "stride must be smaller than the frame".into(),
        ));
    }
    if !(spec.hom_noise_sigma >= 0.0) {
        return Err(SynthError::FlightInvalid("noise sigma must be >= 0".into()));
    }
    let (fw, fh) = (fw.min(field.width()), fh.min(field.height()));
    let xs = axis_offsets(field.width(), fw, spec.stride.0);
    let ys = axis_offsets(field.height(), fh, spec.stride.1);
    let mut offsets = Vec::with_capacity(xs.len() * ys.len());
    for (k, &y) in ys.iter().enumerate() {
        if k % 2 == 0 {
            offsets.extend(xs.iter().map(|&x| (x, y)));
        } else {
            offsets.extend(xs.iter().rev().map(|&x| (x, y)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.hom_noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| SynthError::FlightInvalid(e.to_string()))?;
    let mut frames = Vec::with_capacity(offsets.len());
    let mut truth_index = Vec::with_capacity(offsets.len());
    for (id, &(ox, oy)) in offsets.iter().enumerate() {
        let pairwise = if id == 0 {
            Homography::identity(0)
        } else {
            let (px, py) = offsets[id - 1];
            let (mut tx, mut ty) = (ox as f64 - px as f64, oy as f64 - py as f64);
            if spec.hom_noise_sigma > 0.0 {
                tx += noise.sample(&mut rng);
                ty += noise.sample(&mut rng);
            }
            Homography::translation(tx, ty, id, id - 1)
        };
        let view = BBox::new(ox as f64 - 0.5, oy as f64 - 0.5, fw as f64, fh as f64);
        let mut dets = Vec::new();
        let mut idx = Vec::new();
        for (ti, d) in truth.iter().enumerate() {
            let b = d.bbox();
            let visible = b.x >= view.x && b.y >= view.y && b.x1() <= view.x1() && b.y1() <= view.y1();
            if !visible || spec.drop.contains(&(id, ti)) {
                continue;
            }
            let conf = if spec.conf_jitter > 0.0 {
                spec.conf_base + rng.random_range(-spec.conf_jitter..=spec.conf_jitter)
            } else {
                spec.conf_base
            };
            let local = d.translated(-(ox as f64), -(oy as f64));
            dets.push(Detection {
                conf: conf.clamp(0.0, 1.0),
                ..local.with_source(id as u32, dets.len() as u32)
            });
            idx.push(ti);
        }
        frames.push(FrameRecord {
            frame_id: id,
            image_path: None,
            image_dims: (fw, fh),
            pairwise,
            detections: dets,
        });
        truth_index.push(idx);
    }
    Ok(SynthFlight {
        frames,
        offsets,
        truth_index,
    })
}

/// Label files for a patch grid built from truth boxes fully inside each
/// patch, in the `patch_<row>_<col>.txt` layout.
pub fn patch_labels(grid: &PatchGrid, truth: &[Detection]) -> Vec<(String, String)> {
    grid.patches
        .iter()
        .map(|p| {
            let view = BBox::new(p.x0 as f64 - 0.5, p.y0 as f64 - 0.5, p.width as f64, p.height as f64);
            let dets: Vec<Detection> = truth
                .iter()
                .filter(|d| {
                    let b = d.bbox();
                    b.x >= view.x && b.y >= view.y && b.x1() <= view.x1() && b.y1() <= view.y1()
                })
                .map(|d| d.translated(-(p.x0 as f64), -(p.y0 as f64)))
                .collect();
            (
                crate::mosaic::patch_label_name(p.row, p.col),
                format_labels(&dets, p.width as f64, p.height as f64),
            )
        })
        .collect()
}

/// Writes `mosaic.png`, `truth.csv`, `truth_labels.txt` (normalized to the
/// mosaic) and, when a flight is given, `frames/` in the raw-frame layout.
pub fn write_dataset(dir: &Path, field: &SynthField, flight: Option<&SynthFlight>) -> Result<(), SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    write_rgb(&field.image, &dir.join("mosaic.png"))?;
    let p = dir.join("truth.csv");
    std::fs::write(&p, format_counts_csv(&field.truth_rows())).map_err(io(&p))?;
    let p = dir.join("truth_labels.txt");
    let (w, h) = (field.image.width() as f64, field.image.height() as f64);
    std::fs::write(&p, format_labels(&field.detections, w, h)).map_err(io(&p))?;
    if let Some(flight) = flight {
        let images = flight.images(&field.image);
        write_frame_dir(&dir.join("frames"), &flight.frames, Some(&images))?;
    }
    Ok(())
}
