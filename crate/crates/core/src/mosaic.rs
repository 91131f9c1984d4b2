//! Pre-mosaicked input: overlapping square patches, per-patch detection,
//! translation back to mosaic coordinates and global NMS.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::detections::{nms, parse_labels, Detection, LabelError};
use crate::raster::{classical_detect, ClassicalConfig, RasterError, RgbImage};

pub const DEFAULT_PATCH_SIZE: usize = 1280;
pub const DEFAULT_OVERLAP: f64 = 0.10;
pub const MIN_PATCH_SIZE: usize = 64;

#[derive(Debug, Error)]
pub enum MosaicError {
    #[error("patch size must be >= {MIN_PATCH_SIZE}, got {0}")]
    PatchTooSmall(usize),
    #[error("overlap fraction must be in [0, 1), got {0}")]
    BadOverlap(f64),
    #[error("mosaic is empty ({0}x{1})")]
    EmptyMosaic(usize, usize),
    #[error("{found} detection lists for {expected} patches")]
    GridMismatch { expected: usize, found: usize },
    #[error("patch ({row}, {col}) at origin ({x0}, {y0}): {source}")]
    Provider {
        row: usize,
        col: usize,
        x0: usize,
        y0: usize,
        #[source]
        source: ProviderError,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("{path}: {source}")]
    Label {
        path: PathBuf,
        #[source]
        source: LabelError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// One patch of a [`PatchGrid`], in mosaic pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub x0: usize,
    pub y0: usize,
    /// Actual width and height; smaller than the nominal size only when the
    /// mosaic itself is.
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub overlap_frac: f64,
    pub mosaic_dims: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub patches: Vec<Patch>,
}

impl PatchGrid {
    pub fn stride(&self) -> usize {
        stride(self.patch_size, self.overlap_frac)
    }

    pub fn origins(&self) -> Vec<(usize, usize)> {
        self.patches.iter().map(|p| (p.x0, p.y0)).collect()
    }

    /// Manifest CSV `patch_row,patch_col,x0,y0,size`.
    pub fn manifest_csv(&self) -> String {
        let mut s = String::from("patch_row,patch_col,x0,y0,size\n");
        for p in &self.patches {
            let _ = writeln!(s, "{},{},{},{},{}", p.row, p.col, p.x0, p.y0, self.patch_size);
        }
        s
    }

    /// Whether `(x, y)` lies inside at least one patch.
    pub fn covers(&self, x: usize, y: usize) -> bool {
        self.patches
            .iter()
            .any(|p| x >= p.x0 && x < p.x0 + p.width && y >= p.y0 && y < p.y0 + p.height)
    }
}

fn stride(size: usize, overlap: f64) -> usize {
    ((size as f64 * (1.0 - overlap)).floor() as usize).max(1)
}

/// Origins along one axis: multiples of the stride, with the last one
/// moved back so the patch ends exactly on the mosaic edge.
fn axis_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let last = len - size;
    let mut out: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o < last).collect();
    out.push(last);
    out
}

pub fn patchify(mosaic_dims: (usize, usize), patch_size: usize, overlap_frac: f64) -> Result<PatchGrid, MosaicError> {
    if patch_size < MIN_PATCH_SIZE {
        return Err(MosaicError::PatchTooSmall(patch_size));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(MosaicError::BadOverlap(overlap_frac));
    }
    let (w, h) = mosaic_dims;
    if w == 0 || h == 0 {
        return Err(MosaicError::EmptyMosaic(w, h));
    }
    let step = stride(patch_size, overlap_frac);
    let xs = axis_origins(w, patch_size, step);
    let ys = axis_origins(h, patch_size, step);
    let mut patches = Vec::with_capacity(xs.len() * ys.len());
    for (row, &y0) in ys.iter().enumerate() {
        for (col, &x0) in xs.iter().enumerate() {
            patches.push(Patch {
                row,
                col,
                x0,
                y0,
                width: patch_size.min(w),
                height: patch_size.min(h),
            });
        }
    }
    Ok(PatchGrid {
        patch_size,
        overlap_frac,
        mosaic_dims,
        rows: ys.len(),
        cols: xs.len(),
        patches,
    })
}

/// Source of per-patch detections in patch-local pixels.
pub trait DetectionProvider: Sync {
    fn detect(&self, patch: &Patch, pixels: &RgbImage) -> Result<Vec<Detection>, ProviderError>;

    /// Whether [`DetectionProvider::detect`] reads the pixels at all.
    fn needs_pixels(&self) -> bool {
        true
    }
}

/// Reads `patch_<row>_<col>.txt` label files. A missing file means the
/// patch has no detections.
#[derive(Debug, Clone)]
pub struct LabelDirProvider {
    pub dir: PathBuf,
}

impl LabelDirProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn label_path(&self, row: usize, col: usize) -> PathBuf {
        self.dir.join(patch_label_name(row, col))
    }
}

pub fn patch_label_name(row: usize, col: usize) -> String {
    format!("patch_{row}_{col}.txt")
}

impl DetectionProvider for LabelDirProvider {
    fn detect(&self, patch: &Patch, _pixels: &RgbImage) -> Result<Vec<Detection>, ProviderError> {
        let path = self.label_path(patch.row, patch.col);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                log::debug!("{} missing, no detections", path.display());
                return Ok(Vec::new());
            }
            Err(source) => return Err(ProviderError::Io { path, source }),
        };
        parse_labels(&text, patch.width as f64, patch.height as f64)
            .map_err(|source| ProviderError::Label { path, source })
    }

    fn needs_pixels(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClassicalProvider {
    pub config: ClassicalConfig,
}

impl DetectionProvider for ClassicalProvider {
    fn detect(&self, _patch: &Patch, pixels: &RgbImage) -> Result<Vec<Detection>, ProviderError> {
        Ok(classical_detect(pixels, &self.config)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeConfig {
    pub iou_thresh: f64,
    pub conf_thresh: f64,
    /// Drop detections touching a patch edge that is not a mosaic edge.
    /// Such boxes are truncated views of plants that the overlap shows in
    /// full elsewhere.
    pub drop_edge_truncated: bool,
    /// Distance in pixels from a patch edge within which a box counts as
    /// touching it.
    pub edge_margin: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            iou_thresh: crate::detections::DEFAULT_IOU_THRESH,
            conf_thresh: crate::detections::DEFAULT_CONF_THRESH,
            drop_edge_truncated: true,
            edge_margin: 1.0,
        }
    }
}

fn touches_inner_edge(d: &Detection, p: &Patch, mosaic: (usize, usize), margin: f64) -> bool {
    let b = d.bbox();
    let (pw, ph) = (p.width as f64, p.height as f64);
    (p.x0 > 0 && b.x <= margin)
        || (p.y0 > 0 && b.y <= margin)
        || (p.x0 + p.width < mosaic.0 && b.x1() >= pw - margin)
        || (p.y0 + p.height < mosaic.1 && b.y1() >= ph - margin)
}

/// Translates each patch's detections by the patch origin and runs one
/// class-agnostic NMS over the union. Detections from patch `k` get
/// `source = k` and keep their per-patch `seq`.
pub fn merge_patch_detections(
    grid: &PatchGrid,
    per_patch: &[Vec<Detection>],
    cfg: &MergeConfig,
) -> Result<Vec<Detection>, MosaicError> {
    if per_patch.len() != grid.patches.len() {
        return Err(MosaicError::GridMismatch {
            expected: grid.patches.len(),
            found: per_patch.len(),
        });
    }
    let mut all = Vec::with_capacity(per_patch.iter().map(Vec::len).sum());
    for (k, (patch, dets)) in grid.patches.iter().zip(per_patch).enumerate() {
        for (i, d) in dets.iter().enumerate() {
            if cfg.drop_edge_truncated && touches_inner_edge(d, patch, grid.mosaic_dims, cfg.edge_margin) {
                continue;
            }
            all.push(
                d.translated(patch.x0 as f64, patch.y0 as f64)
                    .with_source(k as u32, i as u32),
            );
        }
    }
    Ok(nms(&all, cfg.iou_thresh, cfg.conf_thresh))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MosaicConfig {
    pub patch_size: usize,
    pub overlap_frac: f64,
    pub merge: MergeConfig,
    /// Worker threads for per-patch detection; 0 uses the global pool.
    pub parallelism: usize,
}

impl Default for MosaicConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH_SIZE,
            overlap_frac: DEFAULT_OVERLAP,
            merge: MergeConfig::default(),
            parallelism: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MosaicRun {
    pub grid: PatchGrid,
    pub per_patch: Vec<Vec<Detection>>,
    pub detections: Vec<Detection>,
}

/// Patchify, detect per patch (in parallel, collected in patch order) and
/// merge.
pub fn run_mosaic_mode<P: DetectionProvider>(
    mosaic: &RgbImage,
    provider: &P,
    cfg: &MosaicConfig,
) -> Result<MosaicRun, MosaicError> {
    let grid = patchify((mosaic.width(), mosaic.height()), cfg.patch_size, cfg.overlap_frac)?;
    let empty = RgbImage::new(0, 0, 3);
    let detect = |p: &Patch| {
        let pixels = if provider.needs_pixels() {
            mosaic.crop(p.x0, p.y0, p.width, p.height)
        } else {
            empty.clone()
        };
        provider.detect(p, &pixels).map_err(|source| MosaicError::Provider {
            row: p.row,
            col: p.col,
            x0: p.x0,
            y0: p.y0,
            source,
        })
    };
    let per_patch: Result<Vec<_>, _> = if cfg.parallelism == 0 {
        grid.patches.par_iter().map(detect).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallelism)
            .build()
            .map_err(|e| MosaicError::ThreadPool(e.to_string()))?
            .install(|| grid.patches.par_iter().map(detect).collect())
    };
    let per_patch = per_patch?;
    let detections = merge_patch_detections(&grid, &per_patch, &cfg.merge)?;
    Ok(MosaicRun {
        grid,
        per_patch,
        detections,
    })
}

/// One manifest record: `(row, col, x0, y0, size)`.
pub type ManifestRow = (usize, usize, usize, usize, usize);

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, csv::Error> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().collect()
}
