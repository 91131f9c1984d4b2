//! Raw-frame input: per-frame detections projected through cumulative
//! homographies into frame 0, then deduplicated by one global NMS.
//!
//! Frame `i` (for `i > 0`) carries the pairwise map from its own pixels to
//! frame `i - 1`; frame 0 carries the identity. The cumulative map of frame
//! `i` is the left-to-right product `H(0<-1) H(1<-2) ... H(i-1<-i)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::detections::{format_labels, nms, parse_labels, Detection, LabelError};
use crate::geometry::{format_homography, parse_homographies, BBox, GeometryError, Homography, Point2};
use crate::raster::io::{read_rgb, write_rgb};
use crate::raster::{RasterError, RgbImage};

/// Largest global canvas, in pixels, accepted before any allocation.
pub const DEFAULT_PIXEL_BUDGET: u64 = 500_000_000;

const IMAGE_EXTENSIONS: [&str; 8] = ["png", "jpg", "jpeg", "tif", "tiff", "bmp", "ppm", "pgm"];

#[derive(Debug, Error)]
pub enum RawFrameError {
    #[error("no frames")]
    NoFrames,
    #[error("frame at position {index} has id {found}; ids must be 0, 1, 2, ...")]
    FrameOrder { index: usize, found: usize },
    #[error("frame {frame}: {source}")]
    Geometry {
        frame: usize,
        #[source]
        source: GeometryError,
    },
    #[error("frame {frame}, detection {detection}: {source}")]
    Projection {
        frame: usize,
        detection: usize,
        #[source]
        source: GeometryError,
    },
    #[error("frame {frame}: cumulative homography is singular (det {det:e})")]
    SingularChain { frame: usize, det: f64 },
    #[error("global extent {width:.0}x{height:.0} exceeds the pixel budget of {budget}")]
    ExtentTooLarge { width: f64, height: f64, budget: u64 },
    #[error("frame {frame}: no image")]
    MissingImage { frame: usize },
    #[error("frame {frame}: no homography file {path}")]
    MissingHomography { frame: usize, path: PathBuf },
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
    #[error("{path}: {source}")]
    Raster {
        path: PathBuf,
        #[source]
        source: RasterError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub image_path: Option<PathBuf>,
    /// Width and height in pixels.
    pub image_dims: (usize, usize),
    /// Map from this frame to the previous one; identity for frame 0.
    pub pairwise: Homography,
    /// Frame-local pixels.
    pub detections: Vec<Detection>,
}

impl FrameRecord {
    /// Continuous frame area: pixel centers are integers, so the edges sit
    /// half a pixel outside them.
    pub fn bounds(&self) -> BBox {
        BBox::new(-0.5, -0.5, self.image_dims.0 as f64, self.image_dims.1 as f64)
    }
}

/// All detections in frame-0 coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalScene {
    pub detections: Vec<Detection>,
    /// Envelope of the projected frame corners and detection centers.
    pub extent: BBox,
    /// Projected bounding box of each frame.
    pub frame_extents: Vec<BBox>,
}

fn check_ids(frames: &[FrameRecord]) -> Result<(), RawFrameError> {
    if frames.is_empty() {
        return Err(RawFrameError::NoFrames);
    }
    for (i, f) in frames.iter().enumerate() {
        if f.frame_id != i {
            return Err(RawFrameError::FrameOrder {
                index: i,
                found: f.frame_id,
            });
        }
    }
    Ok(())
}

/// Cumulative maps into frame 0, one per frame. Frame 0's own pairwise map
/// is ignored.
pub fn cumulative_chain(frames: &[FrameRecord]) -> Result<Vec<Homography>, RawFrameError> {
    check_ids(frames)?;
    let mut chain = Vec::with_capacity(frames.len());
    chain.push(Homography::identity(0));
    for f in &frames[1..] {
        let step = f.pairwise.with_frames(f.frame_id, f.frame_id - 1);
        let prev = chain.last().expect("chain starts non-empty");
        let next = (*prev * step).with_frames(f.frame_id, 0);
        let det = next.determinant();
        if !(det.abs() > crate::geometry::SINGULAR_EPS) {
            return Err(RawFrameError::SingularChain { frame: f.frame_id, det });
        }
        chain.push(next);
    }
    Ok(chain)
}

/// Projects every frame's detections with its cumulative map. Detections
/// get `source = frame id` and `seq = index within the frame`. The global
/// extent is checked against `pixel_budget` before anything is allocated.
pub fn project_all(
    frames: &[FrameRecord],
    chain: &[Homography],
    pixel_budget: u64,
) -> Result<GlobalScene, RawFrameError> {
    check_ids(frames)?;
    if chain.len() != frames.len() {
        return Err(RawFrameError::FrameOrder {
            index: chain.len().min(frames.len()),
            found: frames.len(),
        });
    }
    let frame_extents = frames
        .iter()
        .zip(chain)
        .map(|(f, h)| {
            h.project_box(&f.bounds()).map_err(|source| RawFrameError::Geometry {
                frame: f.frame_id,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let frame_env = frame_extents[1..].iter().fold(frame_extents[0], |a, b| a.union(b));
    if frame_env.w * frame_env.h > pixel_budget as f64 {
        return Err(RawFrameError::ExtentTooLarge {
            width: frame_env.w,
            height: frame_env.h,
            budget: pixel_budget,
        });
    }

    let per_frame: Vec<Vec<Detection>> = frames
        .par_iter()
        .zip(chain)
        .map(|(f, h)| {
            f.detections
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    let b = h.project_box(&d.bbox()).map_err(|source| RawFrameError::Projection {
                        frame: f.frame_id,
                        detection: i,
                        source,
                    })?;
                    let mut out = d.with_source(f.frame_id as u32, i as u32);
                    out.set_bbox(&b);
                    Ok(out)
                })
                .collect::<Result<Vec<_>, RawFrameError>>()
        })
        .collect::<Result<_, _>>()?;
    let detections: Vec<Detection> = per_frame.into_iter().flatten().collect();
    let extent = detections.iter().fold(frame_env, |e, d| {
        let c = d.center();
        e.union(&BBox::new(c.x, c.y, 0.0, 0.0))
    });
    Ok(GlobalScene {
        detections,
        extent,
        frame_extents,
    })
}

/// Class-agnostic NMS over the projected detections.
pub fn consensus(scene: &GlobalScene, iou_thresh: f64, conf_thresh: f64) -> Vec<Detection> {
    nms(&scene.detections, iou_thresh, conf_thresh)
}

/// Integer canvas holding every pixel whose unit square meets `extent`:
/// `(x0, y0, width, height)` with canvas pixel `(u, v)` centered on global
/// point `(x0 + u, y0 + v)`.
pub fn canvas_for(extent: &BBox) -> (i64, i64, usize, usize) {
    let x0 = (extent.x + 0.5).floor() as i64;
    let y0 = (extent.y + 0.5).floor() as i64;
    let x1 = ((extent.x1() - 0.5).ceil() as i64).max(x0);
    let y1 = ((extent.y1() - 0.5).ceil() as i64).max(y0);
    (x0, y0, (x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize)
}

/// Warps every frame onto one canvas covering `extent`, in frame-id order,
/// so later frames overwrite earlier ones. Nearest-neighbour sampling.
/// `load` supplies the pixels of a frame.
pub fn render_mosaic<F>(
    frames: &[FrameRecord],
    chain: &[Homography],
    extent: &BBox,
    load: F,
) -> Result<RgbImage, RawFrameError>
where
    F: Fn(&FrameRecord) -> Result<RgbImage, RawFrameError> + Sync,
{
    check_ids(frames)?;
    let (x0, y0, cw, ch) = canvas_for(extent);
    let mut canvas = RgbImage::new(cw, ch, 3);
    for (f, h) in frames.iter().zip(chain) {
        let img = load(f)?;
        let inv = h.inverse().map_err(|source| RawFrameError::Geometry {
            frame: f.frame_id,
            source,
        })?;
        let fb = h.project_box(&f.bounds()).map_err(|source| RawFrameError::Geometry {
            frame: f.frame_id,
            source,
        })?;
        let u0 = ((fb.x.floor() as i64 - x0).max(0) as usize).min(cw);
        let u1 = ((fb.x1().ceil() as i64 - x0 + 1).max(0) as usize).min(cw);
        let v0 = ((fb.y.floor() as i64 - y0).max(0) as usize).min(ch);
        let v1 = ((fb.y1().ceil() as i64 - y0 + 1).max(0) as usize).min(ch);
        let (iw, ih) = (img.width() as i64, img.height() as i64);
        let rows: Vec<(usize, Vec<Option<[u8; 3]>>)> = (v0..v1)
            .into_par_iter()
            .map(|v| {
                let line = (u0..u1)
                    .map(|u| {
                        let p = Point2::new((x0 + u as i64) as f64, (y0 + v as i64) as f64);
                        let q = inv.project_point(p).ok()?;
                        let (sx, sy) = (q.x.round() as i64, q.y.round() as i64);
                        if sx < 0 || sy < 0 || sx >= iw || sy >= ih {
                            return None;
                        }
                        let px = img.pixel(sx as usize, sy as usize);
                        Some([px[0], px[1], px[2]])
                    })
                    .collect();
                (v, line)
            })
            .collect();
        for (v, line) in rows {
            for (k, px) in line.into_iter().enumerate() {
                if let Some(px) = px {
                    canvas.pixel_mut(u0 + k, v).copy_from_slice(&px);
                }
            }
        }
    }
    Ok(canvas)
}

/// Loads a frame's image from its path.
pub fn load_frame_image(f: &FrameRecord) -> Result<RgbImage, RawFrameError> {
    let path = f
        .image_path
        .as_ref()
        .ok_or(RawFrameError::MissingImage { frame: f.frame_id })?;
    read_rgb(path).map_err(|source| RawFrameError::Raster {
        path: path.clone(),
        source,
    })
}

pub fn frame_label_name(id: usize) -> String {
    format!("frame_{id:06}.txt")
}

pub fn homography_name(id: usize) -> String {
    format!("hom_{id:06}.txt")
}

pub fn frame_image_name(id: usize, ext: &str) -> String {
    format!("frame_{id:06}.{ext}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameDirOptions {
    /// The homography files map frame `i - 1` to frame `i`; invert them.
    pub invert_pairwise: bool,
    /// Frame size used when a frame has no image file.
    pub default_dims: Option<(usize, usize)>,
}

fn parse_id(name: &str, prefix: &str) -> Option<(usize, String)> {
    let rest = name.strip_prefix(prefix)?;
    let (digits, ext) = rest.split_once('.')?;
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((digits.parse().ok()?, ext.to_ascii_lowercase()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RawFrameError + '_ {
    move |source| RawFrameError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads `frame_NNNNNN.<img>`, `frame_NNNNNN.txt` and `hom_NNNNNN.txt`
/// files. Frames without a label file have no detections; a missing
/// `hom_000000.txt` means identity.
pub fn load_frame_dir(dir: &Path, opts: &FrameDirOptions) -> Result<Vec<FrameRecord>, RawFrameError> {
    let mut images: BTreeMap<usize, PathBuf> = BTreeMap::new();
    let mut labels: BTreeMap<usize, PathBuf> = BTreeMap::new();
    let mut homs: BTreeMap<usize, PathBuf> = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some((id, ext)) = parse_id(&name, "frame_") {
            if ext == "txt" {
                labels.insert(id, entry.path());
            } else if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
                images.entry(id).or_insert_with(|| entry.path());
            }
        } else if let Some((id, ext)) = parse_id(&name, "hom_") {
            if ext == "txt" {
                homs.insert(id, entry.path());
            }
        }
    }
    let count = [images.keys().last(), labels.keys().last(), homs.keys().last()]
        .into_iter()
        .flatten()
        .max()
        .map_or(0, |m| m + 1);
    if count == 0 {
        return Err(RawFrameError::NoFrames);
    }

    (0..count)
        .map(|id| {
            let image_path = images.get(&id).cloned();
            let image_dims = match &image_path {
                Some(p) => {
                    let (w, h) = image::image_dimensions(p).map_err(|e| RawFrameError::Raster {
                        path: p.clone(),
                        source: e.into(),
                    })?;
                    (w as usize, h as usize)
                }
                None => opts.default_dims.ok_or(RawFrameError::MissingImage { frame: id })?,
            };
            let pairwise = match homs.get(&id) {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                    let geo = |source| RawFrameError::Geometry { frame: id, source };
                    let mats = parse_homographies(&text).map_err(geo)?;
                    let m = *mats.first().ok_or(geo(GeometryError::EmptyChain))?;
                    let src = id;
                    let dst = id.saturating_sub(1);
                    if opts.invert_pairwise && id > 0 {
                        Homography::new(m, dst, src).and_then(|h| h.inverse()).map_err(geo)?
                    } else {
                        Homography::new(m, src, dst).map_err(geo)?
                    }
                }
                None if id == 0 => Homography::identity(0),
                None => {
                    return Err(RawFrameError::MissingHomography {
                        frame: id,
                        path: dir.join(homography_name(id)),
                    })
                }
            };
            let detections = match labels.get(&id) {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(io_err(p))?;
                    parse_labels(&text, image_dims.0 as f64, image_dims.1 as f64).map_err(|source| {
                        RawFrameError::Label {
                            path: p.clone(),
                            source,
                        }
                    })?
                }
                None => {
                    log::debug!("frame {id}: no label file, no detections");
                    Vec::new()
                }
            };
            Ok(FrameRecord {
                frame_id: id,
                image_path,
                image_dims,
                pairwise,
                detections,
            })
        })
        .collect()
}

/// Writes label and homography files for `frames`, plus images when
/// given (one per frame, in order).
pub fn write_frame_dir(dir: &Path, frames: &[FrameRecord], images: Option<&[RgbImage]>) -> Result<(), RawFrameError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (k, f) in frames.iter().enumerate() {
        let (w, h) = f.image_dims;
        let p = dir.join(frame_label_name(f.frame_id));
        std::fs::write(&p, format_labels(&f.detections, w as f64, h as f64)).map_err(io_err(&p))?;
        let p = dir.join(homography_name(f.frame_id));
        std::fs::write(&p, format_homography(&f.pairwise) + "\n").map_err(io_err(&p))?;
        if let Some(img) = images.and_then(|v| v.get(k)) {
            let p = dir.join(frame_image_name(f.frame_id, "png"));
            write_rgb(img, &p).map_err(|source| RawFrameError::Raster { path: p, source })?;
        }
    }
    Ok(())
}
