//! Debug rendering of detections and layout lines over the oriented image.

use masc::detections::{Detection, PlantClass};
use masc::layout::FieldLayout;
use masc::orientation::rotate;
use masc::raster::RgbImage;

pub const LAYOUT_COLOR: [u8; 3] = [255, 255, 0];

pub fn class_color(cls: PlantClass) -> [u8; 3] {
    match cls {
        PlantClass::Single => [255, 0, 255],
        PlantClass::Double => [0, 0, 255],
        PlantClass::Triple => [0, 255, 0],
    }
}

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.img.width() && (y as usize) < self.img.height() {
            self.img.pixel_mut(x as usize, y as usize).copy_from_slice(&color);
        }
    }

    fn hline(&mut self, y: f64, x0: f64, x1: f64, color: [u8; 3]) {
        let y = y.round() as i64;
        for x in x0.round() as i64..=x1.round() as i64 {
            self.put(x, y, color);
        }
    }

    fn vline(&mut self, x: f64, y0: f64, y1: f64, color: [u8; 3]) {
        let x = x.round() as i64;
        for y in y0.round() as i64..=y1.round() as i64 {
            self.put(x, y, color);
        }
    }
}

/// Draws `dets` (oriented frame) and the layout boundaries onto
/// `background`, which is rotated into the oriented frame first.
pub fn render_overlay(background: &RgbImage, dets: &[Detection], layout: &FieldLayout) -> RgbImage {
    let img = if layout.rotation == 0.0 {
        background.clone()
    } else {
        rotate(background, layout.rotation)
    };
    let mut canvas = Canvas { img };
    let [ex, _, ew, _] = layout.extent;
    for range in &layout.ranges {
        for y in [range.start, range.end] {
            canvas.hline(y, ex, ex + ew, LAYOUT_COLOR);
        }
        for row in &range.rows {
            for x in [row.start, row.end] {
                canvas.vline(x, range.start, range.end, LAYOUT_COLOR);
            }
        }
    }
    for d in dets {
        let b = d.bbox();
        let color = class_color(d.cls);
        canvas.hline(b.y, b.x, b.x1(), color);
        canvas.hline(b.y1(), b.x, b.x1(), color);
        canvas.vline(b.x, b.y, b.y1(), color);
        canvas.vline(b.x1(), b.y, b.y1(), color);
    }
    canvas.img
}

#[cfg(test)]
mod tests {
    use super::*;
    use masc::layout::{Interval, RangeLayout};

    #[test]
    fn draws_boxes_and_lines() {
        let bg = RgbImage::new(40, 30, 3);
        let layout = FieldLayout {
            theta: 90.0,
            rotation: 0.0,
            mode: Default::default(),
            extent: [0.0, 0.0, 40.0, 30.0],
            ranges: vec![RangeLayout {
                start: 2.0,
                end: 28.0,
                rows: vec![Interval::new(5.0, 20.0)],
            }],
        };
        let det = Detection::new(PlantClass::Double, 12.0, 15.0, 4.0, 4.0, 1.0);
        let out = render_overlay(&bg, &[det], &layout);
        assert_eq!(out.pixel(10, 13), &[0, 0, 255]);
        assert_eq!(out.pixel(12, 15), &[0, 0, 0]);
        assert_eq!(out.pixel(30, 2), &LAYOUT_COLOR);
        assert_eq!(out.pixel(5, 10), &LAYOUT_COLOR);
    }
}
