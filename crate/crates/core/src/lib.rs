//! Maize stand counting from UAV imagery.
//!
//! Detections arrive either from external label files or from the built-in
//! colour segmenter, are merged into one global coordinate system (patch
//! offsets for mosaics, cumulative homographies for raw frames), and are
//! then split into ranges and rows to produce per-row stand counts.

// `!(x > 0.0)` style guards are used on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detections;
pub mod evaluation;
pub mod geometry;
pub mod layout;
pub mod mosaic;
pub mod orientation;
pub mod pipeline;
pub mod raster;
pub mod rawframe;
pub mod synth;
