//! Shared counting stage: orientation, rotation of detections into the
//! standard frame, layout and per-row counts.

use thiserror::Error;

use crate::detections::Detection;
use crate::geometry::BBox;
use crate::layout::{count_rows, field_layout, CountReport, FieldLayout, FieldMode, LayoutConfig, LayoutError};
use crate::orientation::{
    radon_variance_downsampled, rotate_detections, rotated_dims, AngleEstimate, OrientationError,
};
use crate::raster::ScalarMap;

/// Longest side of the map the orientation search runs on.
pub const ORIENTATION_MAX_DIM: usize = 512;
/// Smallest cell size of the detection-density map, pixels.
pub const DENSITY_CELL: f64 = 4.0;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("orientation: {0}")]
    Orientation(#[from] OrientationError),
    #[error("layout: {0}")]
    Layout(#[from] LayoutError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Orientation(_) => "orientation",
            PipelineError::Layout(_) => "layout",
        }
    }
}

/// What the row direction is estimated from.
#[derive(Debug, Clone, Copy)]
pub enum OrientationSource<'a> {
    /// An ExG map covering the extent.
    Exg(&'a ScalarMap),
    /// A coarse map painted from the detection boxes.
    Detections,
    /// A known row direction in degrees; no estimation.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountingConfig {
    pub layout: LayoutConfig,
    pub field_mode: FieldMode,
    pub orientation_max_dim: usize,
}

impl Default for CountingConfig {
    fn default() -> Self {
        Self {
            layout: LayoutConfig::default(),
            field_mode: FieldMode::Nursery,
            orientation_max_dim: ORIENTATION_MAX_DIM,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CountingResult {
    pub estimate: Option<AngleEstimate>,
    /// Row direction used, degrees.
    pub theta: f64,
    /// Rotation applied to the detections, degrees.
    pub rotation: f64,
    /// Size of the extent before rotation, pixels.
    pub source_dims: (usize, usize),
    /// Detections in the rotated frame, in input order.
    pub oriented: Vec<Detection>,
    pub layout: FieldLayout,
    pub report: CountReport,
}

/// Box-filled occupancy map of the detections at `cell` pixels per cell,
/// over an extent whose origin is already at 0.
pub fn detection_density(dets: &[Detection], dims: (usize, usize), cell: f64) -> ScalarMap {
    let w = ((dims.0 as f64 / cell).ceil() as usize).max(1);
    let h = ((dims.1 as f64 / cell).ceil() as usize).max(1);
    let mut map = ScalarMap::new(w, h, 1);
    for d in dets {
        let b = d.bbox();
        let x0 = (b.x / cell).floor().max(0.0) as usize;
        let y0 = (b.y / cell).floor().max(0.0) as usize;
        let x1 = ((b.x1() / cell).ceil().max(0.0) as usize).min(w);
        let y1 = ((b.y1() / cell).ceil().max(0.0) as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                map.set(x, y, 0, 1.0);
            }
        }
    }
    map
}

/// Runs the counting stage on detections living in `extent`.
pub fn count_stage(
    dets: &[Detection],
    extent: &BBox,
    source: OrientationSource<'_>,
    cfg: &CountingConfig,
) -> Result<CountingResult, PipelineError> {
    let shifted: Vec<Detection> = dets.iter().map(|d| d.translated(-extent.x, -extent.y)).collect();
    let dims = (extent.w.ceil().max(1.0) as usize, extent.h.ceil().max(1.0) as usize);

    let (estimate, theta, rotation) = match source {
        OrientationSource::Fixed(theta) => (None, theta, crate::orientation::standardizing_rotation(theta)),
        OrientationSource::Exg(map) => {
            let est = radon_variance_downsampled(map, cfg.orientation_max_dim)?;
            (Some(est.clone()), est.theta as f64, est.standardizing_rotation())
        }
        OrientationSource::Detections => {
            let longest = dims.0.max(dims.1) as f64;
            let cell = DENSITY_CELL.max(longest / cfg.orientation_max_dim.max(1) as f64);
            let map = detection_density(&shifted, dims, cell);
            let est = radon_variance_downsampled(&map, cfg.orientation_max_dim)?;
            (Some(est.clone()), est.theta as f64, est.standardizing_rotation())
        }
    };
    log::info!("row direction {theta:.0} deg, rotating by {rotation:.0} deg");

    let (oriented, canvas) = if rotation == 0.0 {
        (shifted, dims)
    } else {
        let new_dims = rotated_dims(dims.0, dims.1, rotation);
        (rotate_detections(&shifted, rotation, dims, new_dims), new_dims)
    };
    let frame = oriented
        .iter()
        .fold(BBox::new(0.0, 0.0, canvas.0 as f64, canvas.1 as f64), |e, d| {
            e.union(&BBox::new(d.cx, d.cy, 0.0, 0.0))
        });
    let layout = field_layout(cfg.field_mode, &oriented, &frame, theta, rotation, &cfg.layout)?;
    let report = count_rows(&layout, &oriented);
    Ok(CountingResult {
        estimate,
        theta,
        rotation,
        source_dims: dims,
        oriented,
        layout,
        report,
    })
}
