use super::morphology::mean_minor_axis;
use super::{
    distance_transform, erode_disk, exg, median_filter, normalized, otsu_threshold, region_stats, regional_maxima,
    watershed, BinaryMask, LabelMap, RasterError, RgbImage, ScalarMap, DEFAULT_RADIUS_FRACTION,
};
use crate::detections::{Detection, PlantClass};

/// Parameters of the colour-segmentation detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalConfig {
    pub median_rows: usize,
    pub median_cols: usize,
    /// Erosion radius as a fraction of the mean component minor axis.
    pub radius_fraction: f64,
    /// Fixed erosion radius, overriding the automatic one.
    pub erosion_radius: Option<usize>,
    /// Minimum marker spacing as a fraction of the mean minor axis.
    pub separation_fraction: f64,
    /// ExG values at or below this never count as vegetation, whatever
    /// Otsu picks. Guards soil-only images where Otsu splits noise.
    pub min_exg: f64,
    /// Watershed cells smaller than this fraction of the median cell area
    /// are dropped as erosion debris.
    pub min_area_fraction: f64,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            median_rows: 5,
            median_cols: 5,
            radius_fraction: DEFAULT_RADIUS_FRACTION,
            erosion_radius: None,
            separation_fraction: 0.5,
            min_exg: 20.0,
            min_area_fraction: 0.2,
        }
    }
}

/// Intermediate maps of one detector run.
#[derive(Debug, Clone)]
pub struct ClassicalStages {
    pub exg: ScalarMap,
    pub mask: BinaryMask,
    pub eroded: BinaryMask,
    pub distance: ScalarMap,
    pub labels: LabelMap,
    pub erosion_radius: usize,
}

/// Median filter, ExG, Otsu, disk erosion, distance transform, regional
/// maxima and watershed, then removal of tiny cells. One `Single` detection per watershed cell; the box
/// is the cell's pixel bounding box and the confidence the cell's peak
/// normalized distance.
pub fn classical_detect(img: &RgbImage, cfg: &ClassicalConfig) -> Result<Vec<Detection>, RasterError> {
    Ok(classical_detect_staged(img, cfg)?.0)
}

pub fn classical_detect_staged(
    img: &RgbImage,
    cfg: &ClassicalConfig,
) -> Result<(Vec<Detection>, Option<ClassicalStages>), RasterError> {
    if img.channels() != 3 {
        return Err(RasterError::ChannelMismatch {
            expected: 3,
            found: img.channels(),
        });
    }
    let filtered = median_filter(img, cfg.median_rows, cfg.median_cols)?;
    let index = exg(&filtered)?;
    let mask = match otsu_threshold(&index) {
        Ok(r) => {
            let bits = r
                .mask
                .bits()
                .iter()
                .zip(index.data())
                .map(|(&b, &v)| b && v > cfg.min_exg)
                .collect();
            BinaryMask::from_bits(img.width(), img.height(), bits)?
        }
        // A constant image holds no vegetation.
        Err(RasterError::DegenerateImage) => return Ok((Vec::new(), None)),
        Err(e) => return Err(e),
    };
    let mean_minor = match mean_minor_axis(&mask) {
        Ok(m) => m,
        Err(RasterError::EmptyMask) => return Ok((Vec::new(), None)),
        Err(e) => return Err(e),
    };
    let radius = cfg
        .erosion_radius
        .unwrap_or_else(|| (cfg.radius_fraction * mean_minor).round().max(0.0) as usize);
    let eroded = erode_disk(&mask, radius);
    let distance = normalized(&distance_transform(&eroded));
    let markers = regional_maxima(&distance, (cfg.separation_fraction * mean_minor).max(1.0));
    let labels = watershed(&distance, &markers, &eroded)?;

    let mut peak = vec![0.0f64; labels.count() as usize];
    for (&l, &d) in labels.labels().iter().zip(distance.data()) {
        if l > 0 {
            let p = &mut peak[l as usize - 1];
            *p = p.max(d);
        }
    }
    let stats = region_stats(&labels);
    let mut areas: Vec<usize> = stats.iter().map(|s| s.area).collect();
    areas.sort_unstable();
    let min_area = areas
        .get(areas.len() / 2)
        .map_or(0.0, |&m| m as f64 * cfg.min_area_fraction);
    let dets = stats
        .iter()
        .zip(&peak)
        .filter(|(s, _)| s.area as f64 >= min_area)
        .enumerate()
        .map(|(i, (s, &conf))| {
            Detection::from_bbox(PlantClass::Single, &s.bbox(), conf.clamp(0.0, 1.0)).with_source(0, i as u32)
        })
        .collect();
    Ok((
        dets,
        Some(ClassicalStages {
            exg: index,
            mask,
            eroded,
            distance,
            labels,
            erosion_radius: radius,
        }),
    ))
}
