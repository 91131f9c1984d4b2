//! Projective geometry shared by every pipeline stage.
//!
//! Coordinates follow the image convention used throughout the crate:
//! `x` grows to the right along columns, `y` grows downward along rows, and
//! the origin sits on the center of the top-left pixel. A pixel with integer
//! index `(c, r)` therefore covers the square `[c - 0.5, c + 0.5] x
//! [r - 0.5, r + 0.5]`.
//!
//! A [`Homography`] carries the frame indices it maps between so chains can
//! be validated before they are multiplied. `src_frame` is the frame whose
//! coordinates the matrix consumes, `dst_frame` the frame it produces.

use std::fmt;
use std::ops::Mul;

use thiserror::Error;

/// Determinant magnitude below which a matrix is treated as singular.
pub const SINGULAR_EPS: f64 = 1e-12;
/// Homogeneous scale below which a projected point is at infinity.
pub const INFINITY_EPS: f64 = 1e-12;

pub type FrameId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("homography chain is empty")]
    EmptyChain,
    #[error(
        "homography chain breaks at factor {index}: expected source frame {expected}, found destination frame {found}"
    )]
    FrameChainMismatch {
        index: usize,
        expected: FrameId,
        found: FrameId,
    },
    #[error("singular homography (|det| = {det:e})")]
    SingularMatrix { det: f64 },
    #[error("point ({x}, {y}) projects to infinity")]
    PointAtInfinity { x: f64, y: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangle anchored at its minimum corner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self {
            x: cx - 0.5 * w,
            y: cy - 0.5 * h,
            w,
            h,
        }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x: x0.min(x1),
            y: y0.min(y1),
            w: (x1 - x0).abs(),
            h: (y1 - y0).abs(),
        }
    }

    pub fn x1(&self) -> f64 {
        self.x + self.w
    }

    pub fn y1(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners in clockwise order starting at the minimum corner.
    pub fn corners(&self) -> [Point2; 4] {
        [
            Point2::new(self.x, self.y),
            Point2::new(self.x1(), self.y),
            Point2::new(self.x1(), self.y1()),
            Point2::new(self.x, self.y1()),
        ]
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= self.x && p.x <= self.x1() && p.y >= self.y && p.y <= self.y1()
    }

    /// Smallest box containing both `self` and `other`.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox::from_corners(
            self.x.min(other.x),
            self.y.min(other.y),
            self.x1().max(other.x1()),
            self.y1().max(other.y1()),
        )
    }

    pub fn envelope<I: IntoIterator<Item = Point2>>(points: I) -> Option<BBox> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in it {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        Some(BBox::from_corners(x0, y0, x1, y1))
    }
}

/// Row-major 3x3 projective map from `src_frame` coordinates into
/// `dst_frame` coordinates.
#[derive(Clone, Copy, PartialEq)]
pub struct Homography {
    m: [f64; 9],
    src_frame: FrameId,
    dst_frame: FrameId,
}

impl fmt::Debug for Homography {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Homography({} <- {}: [{:?}, {:?}, {:?}])",
            self.dst_frame,
            self.src_frame,
            &self.m[0..3],
            &self.m[3..6],
            &self.m[6..9]
        )
    }
}

fn det3(m: &[f64; 9]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
}

fn mul3(a: &[f64; 9], b: &[f64; 9]) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
        }
    }
    out
}

fn normalize(mut m: [f64; 9]) -> [f64; 9] {
    let s = m[8];
    if s != 0.0 && s.is_finite() {
        for v in m.iter_mut() {
            *v /= s;
        }
    }
    m
}

impl Homography {
    /// Builds a homography, normalizing so that `m[2][2] == 1` whenever the
    /// original entry is non-zero.
    pub fn new(m: [f64; 9], src_frame: FrameId, dst_frame: FrameId) -> Result<Self, GeometryError> {
        let m = normalize(m);
        let det = det3(&m);
        if !det.is_finite() || det.abs() <= SINGULAR_EPS {
            return Err(GeometryError::SingularMatrix { det });
        }
        Ok(Self {
            m,
            src_frame,
            dst_frame,
        })
    }

    pub fn identity(frame: FrameId) -> Self {
        Self {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            src_frame: frame,
            dst_frame: frame,
        }
    }

    pub fn translation(tx: f64, ty: f64, src_frame: FrameId, dst_frame: FrameId) -> Self {
        Self {
            m: [1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0],
            src_frame,
            dst_frame,
        }
    }

    /// Rotation by `degrees` counter-clockwise as seen on screen (y down),
    /// about `center`.
    pub fn rotation_about(degrees: f64, center: Point2, frame: FrameId) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        // On screen, counter-clockwise with y pointing down:
        //   x' = c*dx + s*dy,  y' = -s*dx + c*dy
        let tx = center.x - (c * center.x + s * center.y);
        let ty = center.y - (-s * center.x + c * center.y);
        Self {
            m: [c, s, tx, -s, c, ty, 0.0, 0.0, 1.0],
            src_frame: frame,
            dst_frame: frame,
        }
    }

    pub fn matrix(&self) -> &[f64; 9] {
        &self.m
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.m[row * 3 + col]
    }

    pub fn src_frame(&self) -> FrameId {
        self.src_frame
    }

    pub fn dst_frame(&self) -> FrameId {
        self.dst_frame
    }

    pub fn with_frames(mut self, src_frame: FrameId, dst_frame: FrameId) -> Self {
        self.src_frame = src_frame;
        self.dst_frame = dst_frame;
        self
    }

    pub fn determinant(&self) -> f64 {
        det3(&self.m)
    }

    /// Inverse map, with source and destination frames swapped.
    pub fn inverse(&self) -> Result<Self, GeometryError> {
        let m = &self.m;
        let det = det3(m);
        if !det.is_finite() || det.abs() <= SINGULAR_EPS {
            return Err(GeometryError::SingularMatrix { det });
        }
        let inv_det = 1.0 / det;
        let adj = [
            m[4] * m[8] - m[5] * m[7],
            m[2] * m[7] - m[1] * m[8],
            m[1] * m[5] - m[2] * m[4],
            m[5] * m[6] - m[3] * m[8],
            m[0] * m[8] - m[2] * m[6],
            m[2] * m[3] - m[0] * m[5],
            m[3] * m[7] - m[4] * m[6],
            m[1] * m[6] - m[0] * m[7],
            m[0] * m[4] - m[1] * m[3],
        ];
        let mut out = [0.0; 9];
        for (o, a) in out.iter_mut().zip(adj.iter()) {
            *o = a * inv_det;
        }
        Homography::new(out, self.dst_frame, self.src_frame)
    }

    pub fn project_point(&self, p: Point2) -> Result<Point2, GeometryError> {
        let m = &self.m;
        let w = m[6] * p.x + m[7] * p.y + m[8];
        if !(w.abs() >= INFINITY_EPS) {
            return Err(GeometryError::PointAtInfinity { x: p.x, y: p.y });
        }
        Ok(Point2::new(
            (m[0] * p.x + m[1] * p.y + m[2]) / w,
            (m[3] * p.x + m[4] * p.y + m[5]) / w,
        ))
    }

    /// Axis-aligned envelope of the four projected corners of `b`.
    pub fn project_box(&self, b: &BBox) -> Result<BBox, GeometryError> {
        let mut projected = [Point2::default(); 4];
        for (dst, c) in projected.iter_mut().zip(b.corners()) {
            *dst = self.project_point(c)?;
        }
        // Four points always produce an envelope.
        Ok(BBox::envelope(projected).unwrap())
    }

    /// True when the matrix has no projective row, i.e. is an affine map.
    pub fn is_affine(&self) -> bool {
        self.m[6] == 0.0 && self.m[7] == 0.0
    }

    /// Largest absolute element difference against `other`.
    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        self.m
            .iter()
            .zip(other.m.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Homography {
    type Output = Homography;

    /// Raw matrix product `self * rhs` with normalization. Frame indices are
    /// taken from the operands without validation; use [`compose`] when the
    /// chain must be checked.
    fn mul(self, rhs: Homography) -> Homography {
        Homography {
            m: normalize(mul3(&self.m, &rhs.m)),
            src_frame: rhs.src_frame,
            dst_frame: self.dst_frame,
        }
    }
}

/// Multiplies `chain` left to right.
///
/// `chain[k].src_frame` must equal `chain[k + 1].dst_frame`. The result
/// consumes coordinates of the last factor's source frame and produces
/// coordinates of the first factor's destination frame.
pub fn compose(chain: &[Homography]) -> Result<Homography, GeometryError> {
    let (first, rest) = chain.split_first().ok_or(GeometryError::EmptyChain)?;
    let mut acc = first.m;
    let mut src = first.src_frame;
    if det3(&first.m).abs() <= SINGULAR_EPS {
        return Err(GeometryError::SingularMatrix { det: det3(&first.m) });
    }
    for (i, h) in rest.iter().enumerate() {
        if h.dst_frame != src {
            return Err(GeometryError::FrameChainMismatch {
                index: i + 1,
                expected: src,
                found: h.dst_frame,
            });
        }
        let det = det3(&h.m);
        if !det.is_finite() || det.abs() <= SINGULAR_EPS {
            return Err(GeometryError::SingularMatrix { det });
        }
        acc = mul3(&acc, &h.m);
        src = h.src_frame;
    }
    Homography::new(acc, src, first.dst_frame)
}

/// Parses whitespace-separated matrices, nine values per non-empty line.
///
/// A file holding exactly nine values spread over several lines (the
/// one-matrix-per-file layout) is also accepted.
pub fn parse_homographies(text: &str) -> Result<Vec<[f64; 9]>, GeometryError> {
    let mut rows = Vec::new();
    let mut numbers = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = Vec::with_capacity(9);
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| GeometryError::Parse {
                line: idx + 1,
                msg: format!("not a number: {tok:?}"),
            })?;
            if !v.is_finite() {
                return Err(GeometryError::Parse {
                    line: idx + 1,
                    msg: format!("non-finite value {tok:?}"),
                });
            }
            vals.push(v);
        }
        rows.push((idx + 1, vals.len()));
        numbers.extend(vals);
    }
    if rows.iter().all(|&(_, n)| n == 9) {
        return Ok(numbers.chunks_exact(9).map(|c| c.try_into().unwrap()).collect());
    }
    if numbers.len() == 9 {
        return Ok(vec![numbers.try_into().unwrap()]);
    }
    let (line, n) = rows.into_iter().find(|&(_, n)| n != 9).unwrap();
    Err(GeometryError::Parse {
        line,
        msg: format!("expected 9 values, found {n}"),
    })
}

/// Serializes a matrix as a single line of nine values that parse back to
/// the identical `f64`s.
pub fn format_homography(h: &Homography) -> String {
    let parts: Vec<String> = h.m.iter().map(|v| format!("{v:?}")).collect();
    parts.join(" ")
}
